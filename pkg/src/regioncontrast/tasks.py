"""Canonical task names and per-task channel counts."""

from __future__ import annotations

TASKS = ("seg", "depth", "normal")


def task_index(name: str) -> int:
    try:
        return TASKS.index(name)
    except ValueError:
        raise ValueError(f"unknown task {name!r}; expected one of {TASKS}") from None


def task_channels(name: str, n_classes: int) -> int:
    task_index(name)
    if name == "seg":
        if n_classes < 1:
            raise ValueError("segmentation needs at least one class")
        return n_classes
    return 1 if name == "depth" else 3


def order_tasks(names) -> list[str]:
    """Sort task names into canonical order, rejecting unknowns."""
    return sorted(set(names), key=task_index)
