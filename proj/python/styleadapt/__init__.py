"""Adapter-based multi-attribute text style transfer.

A frozen encoder-decoder backbone with per-attribute-value bottleneck
adapters, composable in Parallel (multiple stylistic outputs) or Stack
(compositional editing) configurations. The heavy lifting lives in the
C++ extension; this package re-exports its public surface.
"""

try:  # wheel layout: extension inside the package
    from . import _core as _c
except ImportError:  # build-tree layout: extension on PYTHONPATH
    import _core as _c

__all__ = [
    "AttributeSchema",
    "BackboneConfig",
    "BackboneModel",
    "BackbonePretrainConfig",
    "CompositionPlan",
    "ConfigError",
    "ContractError",
    "CorpusSplit",
    "DataError",
    "LabeledSentence",
    "NumericError",
    "ParamReportData",
    "Pipeline",
    "RunConfig",
    "StageOrderError",
    "TemplateBank",
    "Vocabulary",
    "build_backbone",
    "build_vocabulary",
    "content_score",
    "count_adapter_params",
    "default_schema",
    "default_schema_with_adjectives",
    "g_score",
    "generate_synthetic_corpus",
    "load_corpus",
    "pretrain_backbone",
    "resolve_workdir",
    "save_corpus",
    "tokenize",
]

for _name in __all__:
    globals()[_name] = getattr(_c, _name)

__version__ = "0.1.0"
