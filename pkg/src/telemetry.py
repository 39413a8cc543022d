"""
OpenTelemetry configuration for the detection pipeline.
"""

import logging
from contextlib import contextmanager
from typing import Iterator, Optional

from opentelemetry import trace
from opentelemetry.instrumentation.aiohttp_client import AioHttpClientInstrumentor
from opentelemetry.sdk.trace import TracerProvider
from opentelemetry.sdk.trace.export import BatchSpanProcessor, ConsoleSpanExporter

logger = logging.getLogger(__name__)

TRACER_NAME = "dmfi"

_provider: Optional[TracerProvider] = None


def setup_telemetry(exporter: str = "none") -> bool:
    """Install a tracer provider exporting to the console or OTLP.

    Args:
        exporter: "none", "console" or "otlp"

    Returns:
        True when tracing was switched on
    """
    global _provider
    if exporter == "none":
        return False
    if _provider is not None:
        return True
    try:
        tracer_provider = TracerProvider()
        if exporter == "otlp":
            from opentelemetry.exporter.otlp.proto.grpc.trace_exporter import OTLPSpanExporter
            span_exporter = OTLPSpanExporter()
        else:
            span_exporter = ConsoleSpanExporter()
        tracer_provider.add_span_processor(BatchSpanProcessor(span_exporter))
        trace.set_tracer_provider(tracer_provider)

        # Scoring requests go through aiohttp
        AioHttpClientInstrumentor().instrument()
        _provider = tracer_provider
        logger.info(f"OpenTelemetry initialised with {exporter} exporter")
        return True
    except Exception as e:
        logger.error(f"Failed to initialize OpenTelemetry: {e}")
        raise


def shutdown_telemetry():
    global _provider
    if _provider is not None:
        _provider.shutdown()
        AioHttpClientInstrumentor().uninstrument()
        _provider = None


@contextmanager
def stage_span(stage: str, **attributes) -> Iterator[trace.Span]:
    """Span named dmfi.<stage>; a no-op span when tracing is off"""
    tracer = trace.get_tracer(TRACER_NAME)
    with tracer.start_as_current_span(f"dmfi.{stage}") as span:
        for key, value in attributes.items():
            if value is not None:
                span.set_attribute(f"dmfi.{key}", value if isinstance(value, (int, float, bool)) else str(value))
        yield span
