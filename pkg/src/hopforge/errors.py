"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class HopforgeError(Exception):
    """Base class for all package errors."""


class ConfigError(HopforgeError):
    """Invalid pipeline configuration; fail before any work starts."""


class StoreError(HopforgeError):
    """Corpus store I/O or integrity failure."""


class PageNotFoundError(StoreError):
    """Lookup missed: the title resolves to no stored page.

    Deliberately distinct from :class:`StoreError` so callers can tell a
    missing key from a broken database.
    """


class EmptyDocumentError(HopforgeError):
    """Preprocessing removed every paragraph of a page."""


class CooccurrenceError(HopforgeError):
    """Evidence paragraph never mentions the seed, even after resolution."""


class GatewayError(HopforgeError):
    """Model endpoint kept failing after the configured retries."""


class ProtocolError(HopforgeError):
    """Endpoint answered, but the response violates the wire contract."""


class SchemaViolationError(HopforgeError):
    """Chat output failed validation against the caller's response schema."""


class GenerationError(HopforgeError):
    """Question or clue generation exhausted its retries."""


class HardeningError(GenerationError):
    """Rewrite pipeline could not produce a verifiable harder question."""


class StructureExtractionError(HopforgeError):
    """Chat could not produce a valid textual-structure graph."""


class DecompositionError(HopforgeError):
    """Chat could not produce valid structured predicates."""


class RunNotFoundError(HopforgeError):
    """Requested run id has no manifest on disk."""
