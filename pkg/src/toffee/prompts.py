"""Prompt grammar over the attribute-token vocabulary.

Prompts are template strings filled with attribute tokens (shape, color,
texture, style, background, decoration kind/color/position). The text
encoder parses prompts back to the attribute tokens by exact word match;
filler words carry no meaning. Each change category owns its templates and
resamples exactly the attribute it names.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .scenes import (
    BACKGROUNDS,
    DECORATION_COLORS,
    DECORATION_KINDS,
    POSITIONS,
    SHAPES,
    STYLES,
    SUBJECT_COLORS,
    TEXTURES,
    Decoration,
    SceneSpec,
)

CATEGORIES = ("style", "background", "color", "texture", "add", "remove")
GENERATION_CATEGORIES = ("style", "background", "color", "texture")

VOCAB_GROUPS = {
    "shape": list(SHAPES),
    "color": list(SUBJECT_COLORS),
    "texture": list(TEXTURES),
    "style": list(STYLES),
    "background": list(BACKGROUNDS),
    "decoration": list(DECORATION_KINDS),
    "decoration_color": [c for c in DECORATION_COLORS if c not in SUBJECT_COLORS],
    "position": list(POSITIONS),
}


def vocabulary() -> list[str]:
    """Flat token list, order fixed; stored in encoder checkpoints."""
    out: list[str] = []
    for group in VOCAB_GROUPS.values():
        for tok in group:
            if tok not in out:
                out.append(tok)
    return out


_WORD_RE = re.compile(r"[a-z]+(?:-[a-z]+)*")


class PromptParseError(ValueError):
    pass


def tokenize(prompt: str) -> list[str]:
    if not prompt or not prompt.strip():
        raise PromptParseError("empty prompt")
    return _WORD_RE.findall(prompt.lower())


_BASE_TEMPLATES = (
    "a {color} {texture} {shape} in {style} style on a {background} background",
    "{style} style {color} {shape} with {texture} texture on a {background} background",
    "a {texture} {color} {shape}, {style} style, {background} background",
)

_DECORATED_TEMPLATES = (
    _BASE_TEMPLATES[0] + " with a small {deco_color} {deco_kind} at the {position}",
    _BASE_TEMPLATES[1] + ", plus a {deco_color} {deco_kind} in the {position} corner",
)


@dataclass(frozen=True)
class PromptSample:
    """A sampled prompt plus the target-scene semantics behind it."""

    text: str
    category: str
    target: SceneSpec  # subject attributes after the prompted change (pose ignored)
    decoration: Optional[Decoration]
    template_id: str

    def __str__(self) -> str:
        return self.text


def describe(spec: SceneSpec, rng: np.random.Generator) -> str:
    """A full description of a scene, template chosen at random."""
    if spec.decoration is None:
        template_id = int(rng.integers(len(_BASE_TEMPLATES)))
        return _fill(_BASE_TEMPLATES[template_id], spec)
    template_id = int(rng.integers(len(_DECORATED_TEMPLATES)))
    return _fill(_DECORATED_TEMPLATES[template_id], spec)


def _fill(template: str, spec: SceneSpec) -> str:
    fields = {
        "shape": spec.shape,
        "color": spec.color,
        "texture": spec.texture,
        "style": spec.style,
        "background": spec.background,
    }
    if spec.decoration is not None:
        fields.update(
            deco_kind=spec.decoration.kind,
            deco_color=spec.decoration.color,
            position=spec.decoration.position,
        )
    return template.format(**fields)


def _resample(rng: np.random.Generator, pool, exclude: str) -> str:
    options = [p for p in pool if p != exclude]
    return str(options[int(rng.integers(len(options)))])


def sample_prompt(category: str, rng: np.random.Generator, subject: SceneSpec) -> PromptSample:
    """Draw a prompt describing the target image for one change category.

    The attribute named by the category is resampled to a value different
    from the subject's; everything else is kept. 'add' plans a new corner
    decoration, 'remove' describes the subject without its decoration.
    """
    if category not in CATEGORIES:
        raise ValueError(f"unknown change category {category!r}; expected one of {CATEGORIES}")

    deco = None
    if category == "add":
        if subject.decoration is not None:
            raise ValueError("'add' requires an undecorated subject")
        deco = Decoration(
            kind=str(DECORATION_KINDS[int(rng.integers(len(DECORATION_KINDS)))]),
            color=str(list(DECORATION_COLORS)[int(rng.integers(len(DECORATION_COLORS)))]),
            position=str(list(POSITIONS)[int(rng.integers(len(POSITIONS)))]),
        )
        target = subject.with_attrs(decoration=deco)
        tid = int(rng.integers(len(_DECORATED_TEMPLATES)))
        text = _fill(_DECORATED_TEMPLATES[tid], target)
        return PromptSample(text, category, target, deco, f"add/{tid}")

    if category == "remove":
        if subject.decoration is None:
            raise ValueError("'remove' requires a decorated subject")
        target = subject.with_attrs(decoration=None)
        tid = int(rng.integers(len(_BASE_TEMPLATES)))
        text = _fill(_BASE_TEMPLATES[tid], target)
        return PromptSample(text, category, target, None, f"remove/{tid}")

    pools = {
        "style": STYLES,
        "background": list(BACKGROUNDS),
        "color": list(SUBJECT_COLORS),
        "texture": TEXTURES,
    }
    new_value = _resample(rng, pools[category], getattr(subject, category))
    target = subject.with_attrs(**{category: new_value}, decoration=None)
    tid = int(rng.integers(len(_BASE_TEMPLATES)))
    text = _fill(_BASE_TEMPLATES[tid], target)
    return PromptSample(text, category, target, None, f"{category}/{tid}")


def all_template_ids() -> list[str]:
    ids = []
    for cat in ("style", "background", "color", "texture", "remove"):
        ids.extend(f"{cat}/{i}" for i in range(len(_BASE_TEMPLATES)))
    ids.extend(f"add/{i}" for i in range(len(_DECORATED_TEMPLATES)))
    return ids
