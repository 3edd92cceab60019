"""Prompt template loading and placeholder substitution.

Templates live as plain text files under ``kgsynth/prompts``; placeholders are
``{name}`` tokens replaced literally (plain ``str.replace``, never ``format``,
because the templates themselves contain JSON braces).
"""

from __future__ import annotations

from importlib import resources
from typing import Dict

from .errors import UnknownTemplateError

QA_TEMPLATES = ("open_qa", "mcq", "true_false")

_cache: Dict[str, str] = {}


def load_template(name: str) -> str:
    if name in _cache:
        return _cache[name]
    ref = resources.files("kgsynth") / "prompts" / f"{name}.txt"
    try:
        text = ref.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise UnknownTemplateError(f"no such prompt template: {name}")
    _cache[name] = text
    return text


def fill(template_text: str, **values: str) -> str:
    out = template_text
    for key, value in values.items():
        out = out.replace("{" + key + "}", str(value))
    return out
