"""Run identifiers, tracing spans and operation metrics for pipeline commands."""

from __future__ import annotations

import contextlib
import contextvars
import logging
import os
import time
import uuid
from dataclasses import dataclass
from typing import Any, Dict, Iterator, Optional

try:  # pragma: no cover - optional dependency import
    from opentelemetry import metrics, trace
    from opentelemetry.sdk.metrics import MeterProvider
    from opentelemetry.sdk.metrics.export import (
        MetricReader,
        PeriodicExportingMetricReader,
    )
    from opentelemetry.sdk.resources import Resource
    from opentelemetry.sdk.trace import TracerProvider
    from opentelemetry.sdk.trace.export import (
        BatchSpanProcessor,
        SpanExporter,
        SpanProcessor,
    )
    from opentelemetry.trace import Status, StatusCode

    _OTEL_AVAILABLE = True
except ImportError:  # pragma: no cover - graceful degradation when OTEL is absent
    metrics = trace = None  # type: ignore[assignment]
    MeterProvider = MetricReader = PeriodicExportingMetricReader = None  # type: ignore[assignment]
    Resource = None  # type: ignore[assignment]
    TracerProvider = None  # type: ignore[assignment]
    BatchSpanProcessor = None  # type: ignore[assignment]
    SpanExporter = SpanProcessor = Any  # type: ignore[assignment]
    Status = StatusCode = None  # type: ignore[assignment]
    _OTEL_AVAILABLE = False

_logger = logging.getLogger(__name__)

_TRACER_NAME = "pcic.pipeline"
_SERVICE_NAME = "pcic"

current_run_id_var: contextvars.ContextVar[str] = contextvars.ContextVar(
    "pipeline_run_id", default=""
)

_tracer_provider: Optional[Any] = None
_meter_provider: Optional[Any] = None
_configured = False

_run_counter = None
_operation_counter = None
_latency_histogram = None
_bits_counter = None


class _NoopSpan:
    """Minimal span shim used when OpenTelemetry is unavailable."""

    def __init__(self, attributes: Optional[Dict[str, object]] = None) -> None:
        self.attributes: Dict[str, object] = dict(attributes or {})

    def record_exception(self, _exc: Exception) -> None:  # pragma: no cover - noop
        return

    def set_status(self, _status: Any) -> None:  # pragma: no cover - noop
        return

    def set_attribute(self, key: str, value: object) -> None:
        self.attributes[key] = value


@dataclass
class RunContext:
    """Runtime context for one CLI command."""

    run_id: str
    span: Any
    start_time: float
    status: str = "unknown"
    completed: bool = False

    def mark_failure(self, exc: Optional[Exception] = None) -> None:
        self.status = "failure"
        if exc is not None:
            _mark_span_error(self.span, exc)

    def finish(self) -> None:
        if self.completed:
            return
        if self.status == "unknown":
            self.status = "success"
        duration_ms = (time.perf_counter() - self.start_time) * 1000
        if hasattr(self.span, "set_attribute"):
            self.span.set_attribute("pipeline.run.duration_ms", duration_ms)
            self.span.set_attribute("pipeline.run.status", self.status)
        if _run_counter is not None:
            _run_counter.add(1, attributes={"status": self.status})
        self.completed = True


def configure_observability(
    *,
    span_exporter: Optional[SpanExporter] = None,
    span_processor: Optional[SpanProcessor] = None,
    metric_reader: Optional[MetricReader] = None,
    service_name: str = _SERVICE_NAME,
    enabled: bool = True,
    force: bool = False,
) -> None:
    """Install tracer and meter providers.

    An OTLP exporter is attached only when ``OTEL_EXPORTER_OTLP_ENDPOINT`` is
    set and no exporter, processor or reader is passed in.
    """

    global _configured, _tracer_provider, _meter_provider

    if _configured and not force:
        return

    if not _OTEL_AVAILABLE or not enabled:
        _tracer_provider = None
        _meter_provider = None
        _reset_instruments()
        _configured = True
        return

    resource = Resource.create({"service.name": service_name})
    _tracer_provider = TracerProvider(resource=resource)

    exporter = span_exporter
    reader = metric_reader
    if os.getenv("OTEL_EXPORTER_OTLP_ENDPOINT"):
        exporter, reader = _otlp_exporters(exporter, reader)

    processor = span_processor
    if processor is None and exporter is not None:
        processor = BatchSpanProcessor(exporter)
    if processor is not None:
        _tracer_provider.add_span_processor(processor)
    trace.set_tracer_provider(_tracer_provider)

    if reader is not None:
        _meter_provider = MeterProvider(resource=resource, metric_readers=[reader])
    else:
        _meter_provider = MeterProvider(resource=resource)
    metrics.set_meter_provider(_meter_provider)

    _reset_instruments()
    _configured = True


def _otlp_exporters(exporter: Any, reader: Any) -> tuple:
    try:
        from opentelemetry.exporter.otlp.proto.grpc.metric_exporter import (
            OTLPMetricExporter,
        )
        from opentelemetry.exporter.otlp.proto.grpc.trace_exporter import (
            OTLPSpanExporter,
        )
    except ImportError:  # pragma: no cover - exporter package not installed
        _logger.warning("OTLP endpoint configured but exporter package missing.")
        return exporter, reader
    try:
        if exporter is None:
            exporter = OTLPSpanExporter()
        if reader is None:
            reader = PeriodicExportingMetricReader(OTLPMetricExporter())
    except Exception as exc:  # pragma: no cover - exporter misconfiguration
        _logger.warning("Failed to initialise OTLP exporters: %s", exc)
    return exporter, reader


def generate_run_id() -> str:
    """Generate a unique, log-friendly run identifier."""

    return f"run-{uuid.uuid4()}"


def get_current_run_id() -> str:
    run_id = current_run_id_var.get()
    return run_id or "unassigned"


def _start_span(name: str, attributes: Dict[str, object]):
    if _OTEL_AVAILABLE and _tracer_provider is not None:
        tracer = _tracer_provider.get_tracer(_TRACER_NAME)
        return tracer.start_as_current_span(name, attributes=attributes)
    return contextlib.nullcontext(_NoopSpan(attributes))


def _mark_span_error(span: Any, exc: Exception) -> None:
    if hasattr(span, "record_exception"):
        span.record_exception(exc)
    if Status is not None and StatusCode is not None and hasattr(span, "set_status"):
        span.set_status(Status(StatusCode.ERROR, str(exc)))


@contextlib.contextmanager
def pipeline_run(
    *, run_id: Optional[str] = None, attributes: Optional[Dict[str, object]] = None
) -> Iterator[RunContext]:
    """Bind a run id for the duration of one command and trace it."""

    if not _configured:
        configure_observability(enabled=False)

    resolved_run_id = run_id or current_run_id_var.get() or generate_run_id()
    token = current_run_id_var.set(resolved_run_id)

    span_attributes: Dict[str, object] = {"run.id": resolved_run_id}
    if attributes:
        span_attributes.update(attributes)

    with _start_span("pipeline.run", span_attributes) as span:
        context = RunContext(resolved_run_id, span, time.perf_counter())
        try:
            yield context
        except Exception as exc:
            context.mark_failure(exc)
            raise
        finally:
            context.finish()
            current_run_id_var.reset(token)


@contextlib.contextmanager
def observe_operation(
    operation: str, attributes: Optional[Dict[str, object]] = None
) -> Iterator[Any]:
    """Track latency and tracing information for an operation."""

    if not _configured:
        configure_observability(enabled=False)

    span_attributes: Dict[str, object] = {"pipeline.operation": operation}
    run_id = current_run_id_var.get()
    if run_id:
        span_attributes["run.id"] = run_id
    if attributes:
        span_attributes.update(attributes)

    start = time.perf_counter()
    with _start_span(f"pipeline.{operation}", span_attributes) as span:
        status = "success"
        try:
            yield span
        except Exception as exc:
            status = "failure"
            _mark_span_error(span, exc)
            raise
        finally:
            duration_ms = (time.perf_counter() - start) * 1000
            if hasattr(span, "set_attribute"):
                span.set_attribute("pipeline.operation.duration_ms", duration_ms)
            _record_operation(operation, status, duration_ms)


def record_stream_bits(kind: str, bits: int) -> None:
    """Count entropy-coded bits emitted, split by payload kind (``y``/``z``/``header``)."""

    if _bits_counter is None:
        return
    _bits_counter.add(int(bits), attributes={"payload": kind})


def shutdown_observability() -> None:
    """Flush and drop the providers installed by :func:`configure_observability`."""

    global _configured, _tracer_provider, _meter_provider

    for provider in (_tracer_provider, _meter_provider):
        if provider is None:
            continue
        for method in ("force_flush", "shutdown"):
            hook = getattr(provider, method, None)
            if callable(hook):
                try:
                    hook()
                except Exception:  # pragma: no cover - exporter teardown
                    _logger.exception("Failed to %s telemetry provider", method)

    _configured = False
    _tracer_provider = None
    _meter_provider = None
    _reset_instruments()


def _record_operation(operation: str, status: str, duration_ms: float) -> None:
    attributes = {"operation": operation, "status": status}
    if _operation_counter is not None:
        _operation_counter.add(1, attributes=attributes)
    if _latency_histogram is not None:
        _latency_histogram.record(duration_ms, attributes=attributes)


def _reset_instruments() -> None:
    global _run_counter, _operation_counter, _latency_histogram, _bits_counter

    if not _OTEL_AVAILABLE or metrics is None or _meter_provider is None:
        _run_counter = _operation_counter = _latency_histogram = _bits_counter = None
        return

    meter = _meter_provider.get_meter(_TRACER_NAME)
    _run_counter = meter.create_counter(
        "pipeline_runs_total",
        description="Total number of CLI commands executed.",
    )
    _operation_counter = meter.create_counter(
        "pipeline_operations_total",
        description="Pipeline operations by name and outcome.",
    )
    _latency_histogram = meter.create_histogram(
        "pipeline_operation_duration_ms",
        description="Latency distribution for pipeline operations.",
        unit="ms",
    )
    _bits_counter = meter.create_counter(
        "pipeline_stream_bits_total",
        description="Entropy-coded bits written to bitstreams.",
        unit="bit",
    )
