import hashlib
import json

from cfnoma.telemetry import AuditLogger, Telemetry


def read_lines(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_record_run_writes_one_json_line(tmp_path):
    telemetry = Telemetry(log_dir=str(tmp_path))
    telemetry.record_run("optimize", {"name": "desk", "version": 1}, {"asr_bps": 1.5e7, "feasible": True}, 12.3456)
    telemetry.shutdown()

    (record,) = read_lines(tmp_path / "cfnoma.log")
    assert record["run.kind"] == "optimize"
    assert record["profile.name"] == "desk"
    assert record["latency.ms"] == 12.35
    assert record["asr_bps"] == 1.5e7
    assert record["timestamp"].endswith("Z")
    assert len(record["trace.id"]) == 32
    assert "scenario" not in record


def test_record_run_keeps_the_scenario(tmp_path):
    telemetry = Telemetry(log_dir=str(tmp_path))
    telemetry.record_run("sweep-task", {"name": "desk"}, {"seed": 3}, 0.0, scenario="ues")
    telemetry.shutdown()
    assert read_lines(tmp_path / "cfnoma.log")[0]["scenario"] == "ues"


def test_audit_log_follows_the_log_directory(tmp_path):
    first = AuditLogger(str(tmp_path / "a"))
    first.log_run({"n": 1})
    second = AuditLogger(str(tmp_path / "b"))
    second.log_run({"n": 2})
    assert read_lines(tmp_path / "a" / "cfnoma.log") == [{"n": 1}]
    assert read_lines(tmp_path / "b" / "cfnoma.log") == [{"n": 2}]
    assert len(second.logger.handlers) == 2


def test_profile_hash_ignores_key_order():
    a = {"name": "desk", "system": {"num_aps": 20, "num_ues": 8}}
    b = {"system": {"num_ues": 8, "num_aps": 20}, "name": "desk"}
    expected = hashlib.sha256(json.dumps(a, sort_keys=True).encode()).hexdigest()
    assert Telemetry.hash_profile(a) == Telemetry.hash_profile(b) == expected
