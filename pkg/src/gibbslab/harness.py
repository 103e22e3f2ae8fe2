"""Experiment orchestration: run subcommands, persist artifacts, replay.

Every run writes, into its output directory, the resolved config
(config.resolved.json), a plain-text manifest (manifest.txt) listing the
subcommand, seed, config hash and the sha256 of every artifact, and the
subcommand's own CSV / JSON-lines outputs.  Numeric CSV rows always carry
the seed and config hash.  A run is replayed by re-executing it from the
resolved config into a scratch directory and comparing artifacts byte for
byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import tempfile
from typing import Callable, Dict, List, Optional

import numpy as np

from . import config as cfgmod
from .clusters import enumerate_clusters
from .dynamics import kernel_sup_distance, simulate, ultracontractivity_report
from .errors import ValidationError
from .estimates import MCParams
from .expansion import (
    interaction_terms,
    kp_check,
    kp_lambda_star,
    reconstruct_density,
    summability_report,
    weight_bound_fit,
    weight_table,
)
from .gibbs import (
    BiSpaceInteraction,
    ExpansionDynamicInteraction,
    ZeroDynamicInteraction,
    bispace_hamiltonian,
    conditional_density,
    dlr_test,
    dobrushin_check,
    quasilocality_probe,
)
from .girsanov import density, density_endpoint_ratio
from .lattice import Configuration, Volume


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _write_csv(path: str, header: List[str], rows: List[List], seed: int, chash: str) -> None:
    lines = [",".join(header + ["seed", "configHash"])]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row) + f",{seed},{chash}")
    _write_text(path, "\n".join(lines) + "\n")


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_jsonl(path: str, records: List[dict]) -> None:
    lines = [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in records]
    _write_text(path, "\n".join(lines) + "\n")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


def _estimate_record(est) -> dict:
    return {"value": est.value, "stderr": est.stderr, "n": est.n, "method": est.method}


def _probe_pair_configs(cfg: dict, vol: Volume, state_space: str):
    probes = cfg.get("probes", {})
    pairs = probes.get("pairs")
    if not pairs:
        raise ValidationError("config 'probes.pairs' is required for this subcommand")
    out = []
    for pair in pairs:
        x = cfgmod.resolve_configuration({"x": pair["x"]}, "x", vol, state_space)
        y = cfgmod.resolve_configuration({"y": pair["y"]}, "y", vol, state_space)
        out.append((x, y))
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _run_simulate(cfg, out_dir, seed, chash) -> dict:
    vol = cfgmod.resolve_volume(cfg)
    pot = cfgmod.resolve_potential(cfg)
    drift = cfgmod.resolve_drift(cfg)
    mc = cfgmod.resolve_mc(cfg)
    t = cfgmod.resolve_time(cfg)
    x0 = cfgmod.resolve_configuration(cfg, "x", vol, pot.state_space)
    n_rep = min(mc.n_samples, 256)
    bundle = simulate(drift, pot, vol, x0, t, mc.dt, seed, n_replicas=n_rep)
    sites = list(bundle.sites)
    header = ["time"] + ["x" + "_".join(map(str, s)) for s in sites]
    rows = [
        [float(bundle.times[k])] + [float(bundle.values[0, i, k]) for i in range(len(sites))]
        for k in range(bundle.times.size)
    ]
    _write_csv(os.path.join(out_dir, "paths.csv"), header, rows, seed, chash)
    terminal = bundle.values[:, :, -1]
    srows = [
        ["_".join(map(str, s)), float(terminal[:, i].mean()),
         float(terminal[:, i].std(ddof=1) / math.sqrt(n_rep))]
        for i, s in enumerate(sites)
    ]
    _write_csv(
        os.path.join(out_dir, "terminal_summary.csv"),
        ["site", "mean", "stderr"], srows, seed, chash,
    )
    return {"artifacts": ["paths.csv", "terminal_summary.csv"], "replicas": n_rep}


def _run_density(cfg, out_dir, seed, chash) -> dict:
    vol = cfgmod.resolve_volume(cfg)
    pot = cfgmod.resolve_potential(cfg)
    drift = cfgmod.resolve_drift(cfg)
    mc = cfgmod.resolve_mc(cfg)
    t = cfgmod.resolve_time(cfg)
    rows = []
    for i, (x, y) in enumerate(_probe_pair_configs(cfg, vol, pot.state_space)):
        est = density(drift, pot, vol, x, y, t, mc, seed)
        rows.append([i, "bridge", est.value, est.stderr, est.n])
        oracle = density_endpoint_ratio(drift, pot, vol, x, y, t, mc, seed)
        rows.append([i, "endpoint-ratio", oracle.value, oracle.stderr, oracle.n])
    _write_csv(
        os.path.join(out_dir, "density.csv"),
        ["pair", "method", "value", "stderr", "n"], rows, seed, chash,
    )
    return {"artifacts": ["density.csv"], "pairs": len(rows) // 2}


def _run_expand(cfg, out_dir, seed, chash) -> dict:
    vol = cfgmod.resolve_volume(cfg)
    nbhd = cfgmod.resolve_neighborhood(cfg)
    pot = cfgmod.resolve_potential(cfg)
    drift = cfgmod.resolve_drift(cfg)
    mc = cfgmod.resolve_mc(cfg)
    grid = cfgmod.resolve_grid(cfg)
    trunc = cfgmod.require(cfg, "truncation")
    k_max = int(cfgmod.require(trunc, "kMax"))
    n_max = int(trunc.get("nMax", 2))
    x = cfgmod.resolve_configuration(cfg, "x", vol, pot.state_space)
    y = cfgmod.resolve_configuration(cfg, "y", vol, pot.state_space)

    table = weight_table(vol, nbhd, grid, k_max, x, y, drift, pot, mc, seed)
    _write_jsonl(
        os.path.join(out_dir, "weights.jsonl"),
        [
            {"cluster": G.to_record(), "estimate": _estimate_record(e)}
            for G, e in table.items()
        ],
    )
    itab = interaction_terms(table, n_max)
    _write_jsonl(
        os.path.join(out_dir, "interaction.jsonl"),
        [
            {"trace": [list(s) for s in key], "estimate": _estimate_record(e)}
            for key, e in itab.entries
        ],
    )
    rec = reconstruct_density(table)
    summ = summability_report(itab)
    summary = {
        "reconstruct": _estimate_record(rec),
        "interactionTotal": _estimate_record(itab.total()),
        "summability": {"sup": summ["sup"], "nTerms": summ["nTerms"]},
        "nClusters": len(table),
    }
    artifacts = ["weights.jsonl", "interaction.jsonl", "expand_summary.json"]
    if cfg.get("betaGrid"):
        rows = weight_bound_fit(
            cfg["betaGrid"], vol, nbhd, drift, pot, x, y,
            cfgmod.resolve_time(cfg), k_max, mc, seed,
        )
        _write_csv(
            os.path.join(out_dir, "lambda_fit.csv"),
            ["beta", "T", "M", "lambdaHat", "c1Hat", "c2Hat", "maxAbsZ", "nClusters"],
            [[r[k] for k in ("beta", "T", "M", "lambdaHat", "c1Hat", "c2Hat", "maxAbsZ", "nClusters")] for r in rows],
            seed, chash,
        )
        artifacts.append("lambda_fit.csv")
    _write_text(
        os.path.join(out_dir, "expand_summary.json"),
        json.dumps(summary, sort_keys=True, indent=1) + "\n",
    )
    return {"artifacts": artifacts, **summary}


def _run_kp(cfg, out_dir, seed, chash) -> dict:
    vol = cfgmod.resolve_volume(cfg)
    nbhd = cfgmod.resolve_neighborhood(cfg)
    grid = cfgmod.resolve_grid(cfg)
    k_max = int(cfgmod.require(cfgmod.require(cfg, "truncation"), "kMax"))
    lambdas = cfg.get("probes", {}).get("lambdas", [0.0, 1.0])
    rows = []
    for lam in lambdas:
        res = kp_check(float(lam), vol, nbhd, grid, k_max)
        rows.append([res["lambda"], res["satisfied"], res["worstRatio"], res["nClusters"]])
    star = kp_lambda_star(vol, nbhd, grid, k_max)
    rows.append([star, True, "lambdaStar", ""])
    _write_csv(
        os.path.join(out_dir, "kp.csv"),
        ["lambda", "satisfied", "worstRatio", "nClusters"], rows, seed, chash,
    )
    return {"artifacts": ["kp.csv"], "lambdaStar": star}


def _run_dobrushin(cfg, out_dir, seed, chash) -> dict:
    vol = cfgmod.resolve_volume(cfg)
    phi = cfgmod.resolve_interaction(cfg, vol)
    res = dobrushin_check(phi)
    _write_csv(
        os.path.join(out_dir, "dobrushin.csv"),
        ["value", "stderr", "passes"],
        [[res["value"], "exact", res["passes"]]], seed, chash,
    )
    return {"artifacts": ["dobrushin.csv"], **res}


def _run_dlr(cfg, out_dir, seed, chash) -> dict:
    big = cfgmod.resolve_volume(cfg)
    pot = cfgmod.resolve_potential(cfg)
    phi = cfgmod.resolve_interaction(cfg, big)
    probes = cfg.get("probes", {})
    sub_box = probes.get("subBox")
    if sub_box is None:
        raise ValidationError("config 'probes.subBox' is required for dlr")
    sub = Volume.box(sub_box[0], sub_box[1])
    mc = cfgmod.resolve_mc(cfg)
    rep = dlr_test(
        phi, pot, big, sub,
        int(probes.get("nOuter", 200)), int(probes.get("nInner", 4)), seed, mc,
    )
    rows = [
        [r["f"], r["direct"], r["directStderr"], r["twoStage"], r["twoStageStderr"], r["z"]]
        for r in rep["rows"]
    ]
    _write_csv(
        os.path.join(out_dir, "dlr.csv"),
        ["f", "direct", "directStderr", "twoStage", "twoStageStderr", "z"],
        rows, seed, chash,
    )
    return {"artifacts": ["dlr.csv"], "maxAbsZ": rep["maxAbsZ"]}


def _resolve_bispace(cfg, seed) -> BiSpaceInteraction:
    vol = cfgmod.resolve_volume(cfg)
    pot = cfgmod.resolve_potential(cfg)
    phi = cfgmod.resolve_interaction(cfg, vol)
    t = cfgmod.resolve_time(cfg)
    probes = cfg.get("probes", {})
    kind = probes.get("dynamic", "zero")
    if kind == "zero":
        dyn = ZeroDynamicInteraction()
    elif kind == "expansion":
        drift = cfgmod.resolve_drift(cfg)
        nbhd = cfgmod.resolve_neighborhood(cfg)
        grid = cfgmod.resolve_grid(cfg)
        trunc = cfgmod.require(cfg, "truncation")
        mc = cfgmod.resolve_mc(cfg)
        dyn = ExpansionDynamicInteraction(
            drift, pot, vol, nbhd, grid,
            int(cfgmod.require(trunc, "kMax")), int(trunc.get("nMax", 1)),
            mc.with_samples(min(mc.n_samples, 1000)), seed,
        )
    else:
        raise ValidationError(f"unknown dynamic interaction kind '{kind}'")
    return BiSpaceInteraction(phi, dyn, pot, t)


def _run_bispace(cfg, out_dir, seed, chash) -> dict:
    vol = cfgmod.resolve_volume(cfg)
    pot = cfgmod.resolve_potential(cfg)
    bsi = _resolve_bispace(cfg, seed)
    x = cfgmod.resolve_configuration(cfg, "x", vol, pot.state_space)
    y = cfgmod.resolve_configuration(cfg, "y", vol, pot.state_space)
    h = bispace_hamiltonian(bsi, vol, vol, x, y)
    _write_csv(
        os.path.join(out_dir, "bispace.csv"),
        ["quantity", "value", "stderr"],
        [["hamiltonian", h, "exact"]], seed, chash,
    )
    return {"artifacts": ["bispace.csv"], "hamiltonian": h}


def _run_quasilocality(cfg, out_dir, seed, chash) -> dict:
    pot = cfgmod.resolve_potential(cfg)
    work = cfgmod.resolve_volume(cfg)
    probes = cfg.get("probes", {})
    win_box = probes.get("window")
    if win_box is None:
        raise ValidationError("config 'probes.window' is required for quasilocality")
    window = Volume.box(win_box[0], win_box[1])
    deltas = [Volume.box(b[0], b[1]) for b in probes.get("deltas", [])]
    if not deltas:
        raise ValidationError("config 'probes.deltas' is required for quasilocality")
    pair_specs = probes.get("pairs")
    if not pair_specs:
        raise ValidationError("config 'probes.pairs' is required for quasilocality")
    pairs = []
    for pair in pair_specs:
        za = cfgmod.resolve_configuration({"x": pair["x"]}, "x", work, pot.state_space)
        zb = cfgmod.resolve_configuration({"y": pair["y"]}, "y", work, pot.state_space)
        pairs.append((za, zb))
    bsi = _resolve_bispace(cfg, seed)
    mc = cfgmod.resolve_mc(cfg)
    rows = quasilocality_probe(bsi, window, deltas, pairs, mc, seed)
    _write_csv(
        os.path.join(out_dir, "quasilocality.csv"),
        ["delta", "supDiff", "noise"],
        [[json.dumps(r["delta"]), r["supDiff"], r["noise"]] for r in rows],
        seed, chash,
    )
    return {"artifacts": ["quasilocality.csv"], "curve": [r["supDiff"] for r in rows]}


def _run_report(cfg, out_dir, seed, chash) -> dict:
    found = {}
    for name in sorted(os.listdir(out_dir)):
        if name.endswith(".csv") or name.endswith(".jsonl"):
            with open(os.path.join(out_dir, name), "r", encoding="utf-8") as fh:
                found[name] = sum(1 for _ in fh)
    report = {"configHash": chash, "seed": seed, "files": found}
    _write_text(
        os.path.join(out_dir, "report.json"),
        json.dumps(report, sort_keys=True, indent=1) + "\n",
    )
    return {"artifacts": ["report.json"], "files": found}


SUBCOMMANDS: Dict[str, Callable] = {
    "simulate": _run_simulate,
    "density": _run_density,
    "expand": _run_expand,
    "kp": _run_kp,
    "dobrushin": _run_dobrushin,
    "dlr": _run_dlr,
    "bispace": _run_bispace,
    "quasilocality": _run_quasilocality,
    "report": _run_report,
}


def run(subcommand: str, cfg: dict, out_dir: str, seed: Optional[int] = None) -> dict:
    """Execute one subcommand; writes artifacts and the run manifest."""
    if subcommand not in SUBCOMMANDS:
        raise ValidationError(
            f"unknown subcommand '{subcommand}'; choose from {sorted(SUBCOMMANDS)}"
        )
    effective_seed = int(seed if seed is not None else cfg.get("seed", 0))
    resolved = dict(cfg)
    resolved["seed"] = effective_seed
    chash = cfgmod.config_hash(resolved)
    os.makedirs(out_dir, exist_ok=True)
    _write_text(
        os.path.join(out_dir, "config.resolved.json"),
        json.dumps(resolved, sort_keys=True, indent=1) + "\n",
    )
    summary = SUBCOMMANDS[subcommand](resolved, out_dir, effective_seed, chash)
    artifacts = ["config.resolved.json"] + summary.get("artifacts", [])
    manifest = [
        f"subcommand: {subcommand}",
        f"seed: {effective_seed}",
        f"configHash: {chash}",
    ]
    for name in artifacts:
        manifest.append(f"artifact: {name} sha256 {_sha256(os.path.join(out_dir, name))}")
    _write_text(os.path.join(out_dir, "manifest.txt"), "\n".join(manifest) + "\n")
    summary["configHash"] = chash
    summary["seed"] = effective_seed
    return summary


def replay(artifact_dir: str) -> dict:
    """Re-run a stored experiment and compare artifacts byte for byte."""
    manifest_path = os.path.join(artifact_dir, "manifest.txt")
    if not os.path.exists(manifest_path):
        raise ValidationError(f"no manifest.txt under {artifact_dir}")
    meta = {}
    artifacts = []
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for line in fh:
            key, _, rest = line.strip().partition(": ")
            if key == "artifact":
                artifacts.append(rest.split(" sha256 ")[0])
            else:
                meta[key] = rest
    with open(os.path.join(artifact_dir, "config.resolved.json"), "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    with tempfile.TemporaryDirectory() as tmp:
        run(meta["subcommand"], cfg, tmp, seed=int(meta["seed"]))
        for name in artifacts:
            old = os.path.join(artifact_dir, name)
            new = os.path.join(tmp, name)
            if not os.path.exists(new):
                return {"ok": False, "firstDivergence": f"{name}: missing on replay"}
            with open(old, "rb") as f1, open(new, "rb") as f2:
                a, b = f1.read(), f2.read()
            if a != b:
                for lineno, (la, lb) in enumerate(
                    zip(a.decode("utf-8", "replace").splitlines(),
                        b.decode("utf-8", "replace").splitlines()),
                    start=1,
                ):
                    if la != lb:
                        return {
                            "ok": False,
                            "firstDivergence": f"{name}:{lineno}: {la!r} != {lb!r}",
                        }
                return {"ok": False, "firstDivergence": f"{name}: length mismatch"}
    return {"ok": True, "firstDivergence": None}
