"""Online few-shot adaptation of precomputed vision-language embeddings.

Two trained cross-attention blocks refine category and image embeddings
from a handful of labeled support samples; zero-shot and cache-model
baselines, an episodic trainer/evaluator, a binary archive format, and a
CLI round out the toolkit.
"""

__version__ = "0.1.0"

# Lazy re-exports keep this module import-light: the CLI must be able to
# apply the ATTN_ADAPTER_THREADS cap before numpy's BLAS loads.
_EXPORTS = {
    "AttnAdapterClassifier": "estimators",
    "TipAdapterClassifier": "estimators",
    "ZeroShotClassifier": "estimators",
    "EmbeddingArchive": "archive",
    "load_archive": "archive",
    "save_archive": "archive",
    "load_checkpoint": "archive",
    "save_checkpoint": "archive",
    "SupportSet": "adapters",
    "AdapterParams": "adapters",
    "init_params": "adapters",
    "memory_attn_forward": "adapters",
    "local_global_forward": "adapters",
    "LossConfig": "losses",
    "TipConfig": "losses",
    "zero_shot_logits": "losses",
    "tip_adapter_logits": "losses",
    "adapter_logits": "losses",
    "Episode": "episodes",
    "synth_dataset": "episodes",
    "base_novel_split": "episodes",
    "sample_episode": "episodes",
    "subset_archive": "episodes",
    "derive_seed": "episodes",
    "TrainConfig": "trainer",
    "EpisodeResult": "trainer",
    "train": "trainer",
    "evaluate": "trainer",
    "evaluate_zero_shot": "trainer",
    "evaluate_tip": "trainer",
    "tip_hyperparam_search": "trainer",
}

__all__ = sorted(_EXPORTS) + ["__version__"]


def __getattr__(name):
    if name in _EXPORTS:
        import importlib

        module = importlib.import_module(f".{_EXPORTS[name]}", __name__)
        return getattr(module, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
