"""Plain-text run configuration: one ``dotted.key = value`` per line, ``#`` starts a comment."""
from __future__ import annotations

import copy
import hashlib
import json
import shlex
from dataclasses import dataclass, field

DEFAULTS = {
    "potential.family": "abg",
    "potential.alpha": 2.0,
    "potential.gamma": 0.3,
    "potential.coeffs": [],
    "potential.samples": 201,
    "opt.grad_tol": 1e-8,
    "opt.max_iter": 20000,
    "opt.memory": 12,
    "one_dim.X": 10.0,
    "one_dim.h": 0.005,
    "one_dim.dedup": 0.1,
    "one_dim.n_probes": 20,
    "check.tol": 1e-6,
    "strip.X": 10.0,
    "strip.h": 0.05,
    "strip.L_list": [0.5, 1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0],
    "strip.L": 4.0,
    "hetero.Y": 8.0,
    "hetero.q_index": 0,
    "prism.j": [2, 3],
    "prism.X": 8.0,
    "prism.Z": 12.0,
    "prism.hx": 0.1,
    "prism.hy": 0.15,
    "prism.hz": 0.15,
    "prism.cap": "dirichlet",
    "prism.grad_tol": 1e-9,
    "assemble.resolution": 32,
    "assemble.samples": 2000,
    "run.out_dir": "out",
    "run.seed": 0,
    "run.stages": ["heteroclinic", "spectrum", "check", "m2l-table", "hetero2d", "prism", "assemble", "plot"],
}

STAGES = ("heteroclinic", "spectrum", "check", "strip", "m2l-table", "hetero2d", "prism", "assemble", "plot")
LIST_KEYS = {"potential.coeffs", "strip.L_list", "prism.j", "run.stages"}


class ConfigError(ValueError):
    pass


def _scalar(text):
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _parse_value(key, text):
    text = text.strip()
    if key == "potential.coeffs":
        # triples "i:j:c" for the term c * s^i * t^j with s = xi1^2, t = xi2^2
        out = []
        for item in text.strip("[]").replace(";", ",").split(","):
            item = item.strip()
            if not item:
                continue
            parts = item.split(":")
            if len(parts) != 3:
                raise ConfigError(f"bad coefficient entry {item!r}; expected i:j:c")
            out.append((int(parts[0]), int(parts[1]), float(parts[2])))
        return out
    if key in LIST_KEYS or text.startswith("["):
        inner = text.strip("[]")
        return [_scalar(t) for t in inner.replace(",", " ").split() if t]
    return _scalar(text)


def parse_config_text(text):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, val)
    return values


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            text = fh.read()
        return cls.from_text(text)

    @classmethod
    def from_text(cls, text):
        cfg = cls()
        cfg.values.update(parse_config_text(text))
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.values[key]

    def override(self, **kw):
        for k, v in kw.items():
            if v is None:
                continue
            if k not in DEFAULTS:
                raise ConfigError(f"unknown key {k!r}")
            self.values[k] = v
        self.validate()
        return self

    def validate(self):
        v = self.values
        for key in ("one_dim.X", "one_dim.h", "strip.X", "strip.h", "strip.L", "hetero.Y", "prism.X", "prism.Z",
                    "prism.hx", "prism.hy", "prism.hz", "opt.grad_tol", "prism.grad_tol"):
            if not isinstance(v[key], (int, float)) or not v[key] > 0:
                raise ConfigError(f"{key} must be a positive number")
        Ls = v["strip.L_list"]
        if not Ls or any(b <= a for a, b in zip(Ls, Ls[1:])):
            raise ConfigError("strip.L_list must be ascending")
        js = v["prism.j"] if isinstance(v["prism.j"], list) else [v["prism.j"]]
        if any(int(j) != j or j < 2 for j in js):
            raise ConfigError("prism.j entries must be integers >= 2")
        v["prism.j"] = [int(j) for j in js]
        if int(v["opt.max_iter"]) < 1 or int(v["opt.memory"]) < 1:
            raise ConfigError("opt.max_iter and opt.memory must be at least 1")
        if v["prism.cap"] not in ("dirichlet", "neumann"):
            raise ConfigError("prism.cap must be 'dirichlet' or 'neumann'")
        unknown = set(v["run.stages"]) - set(STAGES)
        if unknown:
            raise ConfigError(f"unknown stages in run.stages: {sorted(unknown)}")
        if v["potential.family"] not in ("abg", "poly"):
            raise ConfigError("potential.family must be 'abg' or 'poly'")

    def subset(self, prefixes):
        return {k: self.values[k] for k in sorted(self.values) if any(k.startswith(p) for p in prefixes)}

    def digest(self, prefixes, extra=None):
        payload = {"config": self.subset(prefixes), "extra": extra}
        return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()

    def dumps(self):
        lines = []
        for k in sorted(self.values):
            val = self.values[k]
            if k == "potential.coeffs":
                val = ", ".join(f"{i}:{j}:{c!r}" for i, j, c in val)
            elif isinstance(val, list):
                val = ", ".join(str(x) for x in val)
            elif isinstance(val, str):
                val = shlex.quote(val) if " " in val else val
            lines.append(f"{k} = {val}")
        return "\n".join(lines) + "\n"
