"""Name-based plug-in lookup shared by backends, scorers, metrics and extractors.

A plug-in is named either by a key in a module-level registry or by an
import path of the form ``package.module:factory``.
"""

from __future__ import annotations

import importlib
from typing import Any, Callable, Mapping


class PluginError(LookupError):
    pass


def resolve(name: str, registry: Mapping[str, Callable[..., Any]], kind: str) -> Callable[..., Any]:
    if name in registry:
        return registry[name]
    if ":" in name:
        module_name, _, attr = name.partition(":")
        try:
            module = importlib.import_module(module_name)
            return getattr(module, attr)
        except (ImportError, AttributeError) as exc:
            raise PluginError(f"cannot import {kind} plug-in {name!r}: {exc}") from exc
    known = ", ".join(sorted(registry)) or "none"
    raise PluginError(f"unknown {kind} {name!r} (known: {known}; or use module:factory)")


def create(name: str, registry: Mapping[str, Callable[..., Any]], kind: str, **kwargs: Any) -> Any:
    return resolve(name, registry, kind)(**kwargs)
