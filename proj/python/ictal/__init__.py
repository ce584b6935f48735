"""EEG seizure detection: EDF parsing, quantized TC-ResNet inference, HMM smoothing."""

from ._ictal import (
    FRAGMENT_CHANNELS,
    FRAGMENT_SAMPLES,
    Hmm,
    IctalError,
    Model,
    cost,
    emissions_from_confusion,
    estimate_transitions,
    ewma,
    fake_quant,
    fit_spec,
    parse_annotations,
    parse_edf,
    quantize,
    rates,
    read_edf,
    roc_auc,
    run_pipeline,
    sma,
    write_synthetic_corpus,
)

__all__ = [
    "FRAGMENT_CHANNELS",
    "FRAGMENT_SAMPLES",
    "Hmm",
    "IctalError",
    "Model",
    "cost",
    "emissions_from_confusion",
    "estimate_transitions",
    "ewma",
    "fake_quant",
    "fit_spec",
    "parse_annotations",
    "parse_edf",
    "quantize",
    "rates",
    "read_edf",
    "roc_auc",
    "run_pipeline",
    "sma",
    "write_synthetic_corpus",
]
