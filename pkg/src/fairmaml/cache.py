"""Line-delimited text format for task lists.

Layout::

    fairmaml-tasks 1
    count <N>
    [columns <name>,<name>,...]
    task <id> n=<rows> d=<features> regularizer=<dp|eop|none> gamma=<float> tag=<str|-> [key=value ...]
    <x_1> ... <x_d> <y> <a>        (n lines)
    ...

Floats are written with ``repr`` which round-trips every double exactly.
Extra ``key=value`` pairs on a task line hold generator metadata; values that
parse as int, then float, are typed accordingly.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .dataset import Dataset, Task

MAGIC = "fairmaml-tasks"
VERSION = 1


class CacheError(ValueError):
    pass


def _fmt(v) -> str:
    return repr(float(v))


def _token(value) -> str:
    s = str(value)
    if not s or any(c.isspace() for c in s) or "=" in s:
        raise CacheError(f"cannot store {s!r} in a cache header")
    return s


def dump_tasks(tasks: Iterable[Task], path, columns: Optional[list[str]] = None) -> None:
    tasks = list(tasks)
    lines = [f"{MAGIC} {VERSION}", f"count {len(tasks)}"]
    if columns is not None:
        lines.append("columns " + ",".join(_token(c) for c in columns))
    for t in tasks:
        d = t.dataset
        head = [
            "task",
            str(int(t.task_id)),
            f"n={len(d)}",
            f"d={d.n_features}",
            f"regularizer={t.regularizer or 'none'}",
            f"gamma={_fmt(t.gamma)}",
            f"tag={_token(d.tag) if d.tag else '-'}",
        ]
        for key, value in t.meta.items():
            head.append(f"{_token(key)}={_token(repr(value) if isinstance(value, float) else value)}")
        lines.append(" ".join(head))
        for x, y, a in zip(d.X, d.Y, d.A):
            lines.append(" ".join([*map(_fmt, x), str(int(y)), str(int(a))]))
    tmp = Path(str(path) + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)


def _parse_value(s: str):
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    return s


def load_tasks_with_columns(path) -> tuple[list[Task], Optional[list[str]]]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise CacheError(f"{path}: empty task cache")
    it = iter(enumerate(lines, start=1))

    def next_line():
        try:
            return next(it)
        except StopIteration:
            raise CacheError(f"{path}: truncated task cache") from None

    _, first = next_line()
    parts = first.split()
    if len(parts) != 2 or parts[0] != MAGIC:
        raise CacheError(f"{path}: not a task cache")
    if int(parts[1]) != VERSION:
        raise CacheError(f"{path}: unsupported cache version {parts[1]}")
    lineno, line = next_line()
    key, _, value = line.partition(" ")
    if key != "count":
        raise CacheError(f"{path}:{lineno}: expected 'count'")
    count = int(value)

    columns = None
    tasks = []
    while len(tasks) < count:
        lineno, line = next_line()
        if line.startswith("columns ") and not tasks and columns is None:
            columns = line.split(" ", 1)[1].split(",")
            continue
        fields = line.split()
        if len(fields) < 2 or fields[0] != "task":
            raise CacheError(f"{path}:{lineno}: expected a task header")
        attrs = dict(f.split("=", 1) for f in fields[2:])
        try:
            n, d = int(attrs.pop("n")), int(attrs.pop("d"))
            reg = attrs.pop("regularizer")
            gamma = float(attrs.pop("gamma"))
            tag = attrs.pop("tag")
        except KeyError as exc:
            raise CacheError(f"{path}:{lineno}: task header missing {exc}") from None
        rows = []
        for _ in range(n):
            rlineno, row = next_line()
            vals = row.split()
            if len(vals) != d + 2:
                raise CacheError(f"{path}:{rlineno}: expected {d + 2} values, got {len(vals)}")
            rows.append(vals)
        arr = np.array(rows, dtype=object).reshape(n, d + 2)
        X = arr[:, :d].astype(np.float64)
        Y = arr[:, d].astype(np.int64)
        A = arr[:, d + 1].astype(np.int64)
        meta = {k: _parse_value(v) for k, v in attrs.items()}
        tasks.append(
            Task(
                Dataset(X, Y, A, tag=None if tag == "-" else tag),
                None if reg == "none" else reg,
                gamma,
                task_id=int(fields[1]),
                meta=meta,
            )
        )
    return tasks, columns


def load_tasks(path) -> list[Task]:
    return load_tasks_with_columns(path)[0]
