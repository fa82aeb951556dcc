"""Plain-text GP format used by the `gp-solve` command.

    # comment
    OBJ
    1 x:1            # one monomial per line: coef var:exp var:exp ...
    1 y              # a bare name means exponent 1
    INEQ
    1 x:-1 y:-1      # posynomial constraints (≤ 1), separated by a `--` line
    --
    0.5 x
    EQ
    2 x:1 y:-1       # each line is one monomial equality (= 1)
    BOUNDS
    x 1e-3 -         # var lower upper, `-` for none

Sections may appear in any order; OBJ is required.
"""
from typing import Dict, List, Optional, Tuple

from ..errors import GPError
from .types import GPProblem, Monomial, Posynomial


SECTIONS = ("OBJ", "INEQ", "EQ", "BOUNDS")


def _parse_monomial(line: str, lineno: int) -> Monomial:
    fields = line.split()
    try:
        coef = float(fields[0])
        exps: Dict[str, float] = {}
        for token in fields[1:]:
            name, _, exp = token.partition(":")
            exps[name] = exps.get(name, 0.0) + (float(exp) if exp else 1.0)
        return Monomial(coef, exps)
    except (ValueError, GPError) as e:
        raise GPError(f"line {lineno}: bad monomial {line!r}: {e}", line=lineno)


def _parse_bound(token: str) -> Optional[float]:
    return None if token == "-" else float(token)


def parse_gp_text(text: str) -> GPProblem:
    section = None
    objective: List[Monomial] = []
    groups: List[List[Monomial]] = [[]]
    equalities: List[Monomial] = []
    bounds: Dict[str, Tuple[Optional[float], Optional[float]]] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.upper() in SECTIONS:
            section = line.upper()
            continue
        if section is None:
            raise GPError(f"line {lineno}: content before any section header", line=lineno)
        if section == "OBJ":
            objective.append(_parse_monomial(line, lineno))
        elif section == "INEQ":
            if line == "--":
                groups.append([])
            else:
                groups[-1].append(_parse_monomial(line, lineno))
        elif section == "EQ":
            equalities.append(_parse_monomial(line, lineno))
        else:
            fields = line.split()
            if len(fields) != 3:
                raise GPError(f"line {lineno}: bounds need `var lower upper`", line=lineno)
            try:
                bounds[fields[0]] = (_parse_bound(fields[1]), _parse_bound(fields[2]))
            except ValueError:
                raise GPError(f"line {lineno}: bad bound value in {line!r}", line=lineno)

    if not objective:
        raise GPError("missing OBJ section")
    inequalities = [Posynomial(g) for g in groups if g]
    return GPProblem(
        objective=Posynomial(objective),
        inequalities=inequalities,
        equalities=equalities,
        bounds=bounds,
    )


def _format_monomial(m: Monomial) -> str:
    return " ".join([repr(m.coef)] + [f"{v}:{e!r}" for v, e in m.exps])


def dump_gp_text(problem: GPProblem) -> str:
    lines = ["OBJ"]
    lines += [_format_monomial(t) for t in problem.objective]
    if problem.inequalities:
        lines.append("INEQ")
        for k, posy in enumerate(problem.inequalities):
            if k:
                lines.append("--")
            lines += [_format_monomial(t) for t in posy]
    if problem.equalities:
        lines.append("EQ")
        lines += [_format_monomial(m) for m in problem.equalities]
    if problem.bounds:
        lines.append("BOUNDS")
        for name, (lo, hi) in sorted(problem.bounds.items()):
            lines.append(f"{name} {'-' if lo is None else repr(lo)} {'-' if hi is None else repr(hi)}")
    return "\n".join(lines) + "\n"
