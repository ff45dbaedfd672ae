"""Run configuration: INI file, then ``BIRAR_<SECTION>_<KEY>`` env vars, then flags.

Every key has a default below; keys not in the schema are rejected. The
file path comes from ``--config`` or ``BIRAR_CONFIG``.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError


def _floats(text) -> tuple:
    if isinstance(text, (tuple, list)):
        return tuple(float(x) for x in text)
    return tuple(float(x) for x in str(text).split(",") if x.strip())


# section -> key -> (parser, default, description)
SCHEMA = {
    "lm": {
        "provider": (str, "ngram", "ngram (trained on the world or corpus) or remote"),
        "order": (int, 2, "n-gram order"),
        "k": (float, 0.1, "add-k smoothing constant"),
        "cache_weight": (float, 0.5, "weight of the unigram cache mixture, in [0, 1)"),
        "endpoint": (str, "", "remote completions endpoint URL"),
        "model": (str, "", "remote model name"),
        "api_key": (str, "", "bearer token for the remote endpoint"),
        "timeout": (float, 30.0, "remote request timeout in seconds"),
        "max_retries": (int, 2, "remote retries after the first attempt"),
        "max_in_flight": (int, 4, "bound on concurrent remote requests"),
    },
    "infodist": {
        "variant": (str, "paper_min_min", "paper_min_min or classic_max_max"),
    },
    "retrieval": {
        "k1": (float, 1.2, "BM25 term-frequency saturation"),
        "b": (float, 0.75, "BM25 length normalization"),
    },
    "env": {
        "seed": (int, 7, "world seed"),
        "n_entities": (int, 60, "entities in the world"),
        "n_relations": (int, 6, "relations in the world"),
        "n_questions": (int, 300, "questions generated"),
        "n_train": (int, 200, "questions in the train split"),
        "hop_depth_mix": (_floats, (0.4, 0.4, 0.2), "probabilities of 1-, 2- and 3-hop questions"),
        "distractors_per_doc": (int, 1, "distractor sentences per document"),
        "relation_density": (float, 0.6, "fraction of (entity, relation) pairs that hold a fact"),
        "max_steps": (int, 4, "action budget per episode"),
        "top_k": (int, 3, "passages returned per search"),
    },
    "train": {
        "mode": (str, "forward", "outcome, forward or backward"),
        "G": (int, 5, "rollouts per question"),
        "lr": (float, 0.05, "learning rate"),
        "beta": (float, 0.001, "KL weight"),
        "eps": (float, 0.2, "clip range"),
        "steps": (int, 200, "GRPO iterations"),
        "seed": (int, 0, "training seed"),
        "inner_epochs": (int, 1, "updates per sampled batch"),
        "batch_size": (int, 8, "questions per step"),
        "workers": (int, 1, "rollout threads"),
        "optimizer": (str, "adam", "adam or sgd"),
    },
    "merge": {
        "lambda": (float, 0.25, "weight of the backward policy"),
        "grid": (_floats, (0.0, 0.25, 0.5, 0.75, 1.0), "lambda values for --sweep"),
    },
    "serve": {
        "host": (str, "127.0.0.1", "bind address"),
        "port": (int, 8765, "bind port"),
    },
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)
    source: Optional[Path] = None

    def section(self, name: str) -> dict:
        return dict(self.values[name])

    def get(self, section: str, key: str):
        return self.values[section][key]

    @property
    def seed(self) -> int:
        return self.values["train"]["seed"]


def _parse(section: str, key: str, raw):
    try:
        parser = SCHEMA[section][key][0]
    except KeyError:
        raise ConfigError(f"unknown config key [{section}] {key}") from None
    try:
        return parser(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for [{section}] {key}: {raw!r} ({exc})") from None


def _env_key(name: str):
    rest = name[len("BIRAR_"):].lower()
    for section in SCHEMA:
        prefix = section + "_"
        if rest.startswith(prefix):
            key = rest[len(prefix):]
            for known in SCHEMA[section]:
                if known.lower() == key:
                    return section, known
    return None


def load_config(path=None, env=None, overrides: Optional[dict] = None) -> RunConfig:
    """Defaults, then ``path`` (or ``$BIRAR_CONFIG``), then env, then ``overrides``.

    ``overrides`` maps ``(section, key)`` to a value; ``None`` values are
    ignored so unset flags fall through.
    """
    env = os.environ if env is None else env
    values = {s: {k: spec[1] for k, spec in keys.items()} for s, keys in SCHEMA.items()}
    path = path or env.get("BIRAR_CONFIG") or None
    source = None
    if path:
        source = Path(path)
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            with open(source) as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {source}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {source}: {exc}") from None
        for section in cp.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in cp.items(section):
                values[section][key] = _parse(section, key, raw)
    for name, raw in env.items():
        if name.startswith("BIRAR_"):
            hit = _env_key(name)
            if hit is not None:
                values[hit[0]][hit[1]] = _parse(hit[0], hit[1], raw)
    for (section, key), value in (overrides or {}).items():
        if value is not None:
            values[section][key] = _parse(section, key, value)
    return RunConfig(values, source)


def reference() -> str:
    """The schema as an INI document with every default, for the docs."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (_, default, doc) in keys.items():
            shown = ",".join(repr(x) if isinstance(x, float) else str(x) for x in default) \
                if isinstance(default, tuple) else default
            lines.append(f"# {doc}")
            lines.append(f"{key} = {shown}")
        lines.append("")
    return "\n".join(lines)
