"""File formats and run configuration."""

from .config import ConfigError, RunConfig, load_config, parse_config
from .container import ContainerError, decode_trial, encode_trial, read_trial, write_trial
from .edf import (
    Annotation,
    EdfAnnotationError,
    EdfFieldError,
    EdfHeaderSizeError,
    EdfParseError,
    EdfRecordSizeError,
    EdfTruncatedError,
    EdfUnsupportedError,
    parse_edf,
    parse_tals,
    read_edf,
    read_edf_file,
    write_edf,
)
from .manifest import DatasetManifest, ManifestError, load_manifest, load_trials, parse_manifest, write_manifest
from .reports import ReportError, read_adjacency, read_csv, read_plan

__all__ = [
    "Annotation", "ConfigError", "ContainerError", "DatasetManifest", "EdfAnnotationError",
    "EdfFieldError", "EdfHeaderSizeError", "EdfParseError", "EdfRecordSizeError", "EdfTruncatedError",
    "EdfUnsupportedError", "ManifestError", "ReportError", "RunConfig", "decode_trial", "encode_trial",
    "load_config", "load_manifest", "load_trials", "parse_config", "parse_edf", "parse_manifest",
    "parse_tals", "read_adjacency", "read_csv", "read_edf", "read_edf_file", "read_plan", "read_trial",
    "write_edf", "write_manifest", "write_trial",
]
