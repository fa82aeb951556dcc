import os
import json
import hashlib
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional

from opentelemetry import trace
from opentelemetry.sdk.trace import TracerProvider
from opentelemetry.sdk.trace.export import BatchSpanProcessor
from opentelemetry.exporter.otlp.proto.grpc.trace_exporter import OTLPSpanExporter
from opentelemetry.sdk.resources import Resource
from opentelemetry.semconv.resource import ResourceAttributes


class AuditLogger:
    def __init__(self, log_dir: str = "logs"):
        Path(log_dir).mkdir(parents=True, exist_ok=True)

        self.logger = logging.getLogger("cfnoma.audit")
        self.logger.setLevel(logging.INFO)
        self.logger.propagate = False

        self.log_file = os.path.abspath(str(Path(log_dir) / "cfnoma.log"))
        # one set of handlers per process, re-pointed when the log directory changes
        if not any(getattr(h, "baseFilename", None) == self.log_file for h in self.logger.handlers):
            for handler in list(self.logger.handlers):
                self.logger.removeHandler(handler)
                handler.close()

            fh = logging.FileHandler(self.log_file)
            fh.setLevel(logging.INFO)
            fh.setFormatter(logging.Formatter('%(message)s'))
            self.logger.addHandler(fh)

            ch = logging.StreamHandler()
            ch.setLevel(logging.INFO)
            ch.setFormatter(logging.Formatter('%(message)s'))
            self.logger.addHandler(ch)

    def log_run(self, data: Dict[str, Any]):
        self.logger.info(json.dumps(data, default=str))


class Telemetry:
    def __init__(self, otel_endpoint: Optional[str] = None, log_dir: str = "logs"):
        self.audit_logger = AuditLogger(log_dir)
        self.tracer_provider = self._setup_tracing(otel_endpoint)
        self.tracer = trace.get_tracer("cfnoma")

    def _setup_tracing(self, endpoint: Optional[str]) -> TracerProvider:
        resource = Resource(attributes={
            ResourceAttributes.SERVICE_NAME: "cfnoma"
        })

        provider = TracerProvider(resource=resource)

        if endpoint:
            try:
                exporter = OTLPSpanExporter(endpoint=endpoint, insecure=True)
                provider.add_span_processor(BatchSpanProcessor(exporter))
                logging.info(f"OpenTelemetry exporter configured: {endpoint}")
            except Exception as e:
                logging.warning(f"Failed to setup OTLP exporter: {e}")

        trace.set_tracer_provider(provider)
        return provider

    def record_run(
        self,
        kind: str,
        profile: Dict[str, Any],
        summary: Dict[str, Any],
        latency_ms: float,
        scenario: Optional[str] = None,
    ):
        """One audit line per finished optimize run, sweep task or LB validation."""
        with self.tracer.start_as_current_span(f"run.{kind}") as span:
            profile_hash = self.hash_profile(profile)
            span.set_attribute("run.kind", kind)
            span.set_attribute("profile.hash", profile_hash)
            span.set_attribute("latency.ms", latency_ms)
            if scenario:
                span.set_attribute("scenario", scenario)

            log_data = {
                "timestamp": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
                "trace.id": format(span.get_span_context().trace_id, '032x'),
                "run.kind": kind,
                "profile.name": profile.get("name"),
                "profile.hash": profile_hash,
                "latency.ms": round(latency_ms, 2),
                **summary,
            }
            if scenario:
                log_data["scenario"] = scenario

            self.audit_logger.log_run(log_data)

    @staticmethod
    def hash_profile(profile: Dict[str, Any]) -> str:
        try:
            data = json.dumps(profile, sort_keys=True, default=str).encode()
            return hashlib.sha256(data).hexdigest()
        except (TypeError, ValueError):
            return "error"

    def shutdown(self):
        if self.tracer_provider:
            self.tracer_provider.shutdown()
