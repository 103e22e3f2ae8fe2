"""Experiment configuration: one JSON file resolves into domain objects.

Schema (all keys camelCase; unknown keys rejected at the top level):

  seed            int, master seed for every derived random stream
  lattice         {"box": [[lo...], [hi...]], "neighborhoodRadius": int}
  potential       {"family": "quadratic" | "circle_free" | "quartic"}
  drift           {"family": <builtin name>, "beta": float, "memory": float,
                   "params": {...}}   params are family-specific
  time            {"t": float, "dt": float, "T": float?, "M": int?}
  mc              {"nSamples", "dt", "bandwidthScale", "essThreshold",
                   "sweeps", "burnIn", "thin"}  all optional
  truncation      {"kMax": int, "nMax": int}
  interaction     {"beta0": float, "terms": [{"template": ..., ...}]}
  betaGrid        [float, ...]
  x, y            {"constant": v} or {"values": {"0": v0, "1": v1, ...}}
  probes          subcommand-specific probe lists
  out             default output directory

Only the keys a subcommand needs are required; everything resolved is
echoed back into the run directory for replay.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from typing import Optional

import numpy as np

from .clusters import TimeGrid
from .dynamics import (
    DriftSpec,
    PotentialSpec,
    builtin_drifts,
    circle_free_potential,
    custom_potential,
    quadratic_potential,
)
from .errors import ValidationError
from .estimates import MCParams
from .gibbs import Interaction, nearest_neighbor_terms, site_field_terms
from .lattice import Configuration, Neighborhood, Volume

TOP_KEYS = {
    "seed", "lattice", "potential", "drift", "time", "mc", "truncation",
    "interaction", "betaGrid", "x", "y", "probes", "out",
}


def load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValidationError("config root must be a JSON object")
    unknown = set(cfg) - TOP_KEYS
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def require(cfg: dict, key: str):
    if key not in cfg:
        raise ValidationError(f"config is missing required key '{key}'")
    return cfg[key]


def resolve_volume(cfg: dict) -> Volume:
    lat = require(cfg, "lattice")
    box = require(lat, "box")
    return Volume.box(box[0], box[1])


def resolve_neighborhood(cfg: dict) -> Neighborhood:
    lat = require(cfg, "lattice")
    return Neighborhood.range1d(int(lat.get("neighborhoodRadius", 1)))


def resolve_potential(cfg: dict) -> PotentialSpec:
    fam = require(cfg, "potential").get("family", "quadratic")
    if fam == "quadratic":
        return quadratic_potential()
    if fam == "circle_free":
        return circle_free_potential()
    if fam == "quartic":
        return custom_potential(
            lambda x: np.asarray(x) ** 4, lambda x: 4.0 * np.asarray(x) ** 3
        )
    raise ValidationError(f"unknown potential family '{fam}'")


def resolve_drift(cfg: dict) -> DriftSpec:
    spec = require(cfg, "drift")
    fam = spec.get("family", "constant")
    catalog = builtin_drifts()
    if fam not in catalog:
        raise ValidationError(f"unknown drift family '{fam}'")
    params = dict(spec.get("params", {}))
    if fam == "constant":
        drift = catalog[fam](params.get("c", 1.0), memory=spec.get("memory", 0.1))
    elif fam == "markov_local":
        nbhd = Neighborhood.range1d(int(params.get("radius", 1)))
        drift = catalog[fam](
            params.get("scale", 1.0), nbhd, memory=spec.get("memory", 0.1)
        )
    elif fam == "resonance":
        drift = catalog[fam](params.get("amplitude", 1.0), memory=spec.get("memory", 0.1))
    elif fam == "delayed_feedback":
        drift = catalog[fam](params.get("alpha", 1.0), spec.get("memory", 0.5))
    else:
        raise ValidationError(
            f"drift family '{fam}' needs callables and cannot be configured from JSON"
        )
    return dataclasses.replace(drift, beta=float(spec.get("beta", 1.0)))


def resolve_mc(cfg: dict) -> MCParams:
    mc = cfg.get("mc", {})
    return MCParams(
        n_samples=int(mc.get("nSamples", 10_000)),
        dt=float(mc.get("dt", 0.01)),
        bandwidth_scale=float(mc.get("bandwidthScale", 1.0)),
        ess_threshold=float(mc.get("essThreshold", 200.0)),
        sweeps=int(mc.get("sweeps", 200)),
        burn_in=int(mc.get("burnIn", 100)),
        thin=int(mc.get("thin", 2)),
    )


def resolve_grid(cfg: dict) -> TimeGrid:
    tm = require(cfg, "time")
    if "T" in tm and "M" in tm:
        return TimeGrid(float(tm["T"]), int(tm["M"]))
    t = float(require(tm, "t"))
    return TimeGrid(t, 1)


def resolve_time(cfg: dict) -> float:
    tm = require(cfg, "time")
    if "t" in tm:
        return float(tm["t"])
    return float(tm["T"]) * int(tm["M"])


def resolve_configuration(cfg: dict, key: str, vol: Volume, state_space: str) -> Configuration:
    spec = require(cfg, key)
    if "constant" in spec:
        return Configuration.constant(vol, float(spec["constant"]), state_space)
    values = require(spec, "values")
    sites = vol.sorted_sites()
    if len(values) != len(sites):
        raise ValidationError(f"'{key}.values' must list one value per site")
    return Configuration(
        {s: float(values[str(i)]) for i, s in enumerate(sites)}, state_space
    )


def resolve_interaction(cfg: dict, vol: Volume) -> Interaction:
    spec = cfg.get("interaction", {"beta0": 0.0, "terms": []})
    terms = []
    for tspec in spec.get("terms", []):
        template = require(tspec, "template")
        coupling = float(tspec.get("coupling", 1.0))
        if template == "nearest_neighbor":
            terms.extend(
                nearest_neighbor_terms(vol, coupling, tspec.get("kind", "tanh"))
            )
        elif template == "site_field":
            terms.extend(site_field_terms(vol, coupling, tspec.get("kind", "bounded")))
        else:
            raise ValidationError(f"unknown interaction template '{template}'")
    return Interaction(tuple(terms), beta0=float(spec.get("beta0", 0.0)))
