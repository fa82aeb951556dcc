from .solver import solve_gp, verify_kkt
from .textfmt import dump_gp_text, parse_gp_text
from .types import GPProblem, GPSolution, KKTReport, Monomial, Posynomial, square_of_sum

__all__ = [
    "GPProblem",
    "GPSolution",
    "KKTReport",
    "Monomial",
    "Posynomial",
    "dump_gp_text",
    "parse_gp_text",
    "solve_gp",
    "square_of_sum",
    "verify_kkt",
]
