"""Experiment runner: config validation, execution, result emission.

A run consumes one JSON config, executes the named experiment and
writes three files into the output directory: results.csv (numeric
rows), manifest.json (the fully resolved config, itself a valid config
that reproduces the run byte for byte) and summary.txt (one line per
oracle check).  Statistical pass/fail lives in summary.txt, not the
exit code: checks at three standard errors are expected to flake at the
permille level by construction.

Exit codes: 0 success, 1 invalid config, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, fastslow, iwip, observables, sdelimit, statistics, transfer
from .maps import MapDescriptor, MapKind
from .sampling import SamplerConfig, a2_probe, stability_probe

# stream ids keep sub-estimators of one run on disjoint sample lanes
_STREAM_MAIN = 0
_STREAM_GK = 1
_STREAM_REF = 2
_STREAM_AUX = 3

_CSV_FIXED = ("time", "coordinate_i", "coordinate_j", "statistic", "value", "stderr")


# ---------------------------------------------------------------------------
# config schemas

_MAP_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": [k.value for k in MapKind]},
        "alpha": {"type": "number"},
        "alpha_limit": {"type": "number"},
    },
    "required": ["kind"],
    "additionalProperties": False,
}

_OBS_NAME = {"enum": sorted(observables.BUILTINS)}

_COMMON_PROPS = {
    "experiment": {"type": "string"},
    "root_seed": {"type": "integer"},
    "workers": {"type": "integer", "minimum": 1},
    "output_dir": {"type": "string"},
    "burn_in": {"type": "integer", "minimum": 1000},
    "build_version": {"type": "string"},
}

_COMMON_DEFAULTS = {
    "root_seed": 12345,
    "workers": 1,
    "output_dir": "results",
    "burn_in": 10000,
}


def _schema(extra_props: dict, required: list[str]) -> dict:
    return {
        "type": "object",
        "properties": {**_COMMON_PROPS, **extra_props},
        "required": ["experiment", *required],
        "additionalProperties": False,
    }


_NUM_LIST = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_INT_LIST = {"type": "array", "items": {"type": "integer"}, "minItems": 1}

_SCHEMAS: dict[str, dict] = {
    "homogenise": _schema(
        {
            "map": _MAP_SCHEMA,
            "slow_system": {
                "type": "object",
                "properties": {
                    "d": {"type": "integer", "minimum": 1},
                    "xi": _NUM_LIST,
                    "drift": {
                        "type": "object",
                        "properties": {
                            "kind": {"enum": ["linear", "constant", "zero"]},
                            "rate": {"type": "number"},
                            "value": _NUM_LIST,
                        },
                        "required": ["kind"],
                        "additionalProperties": False,
                    },
                    "noise": {
                        "type": "object",
                        "properties": {
                            "observable": _OBS_NAME,
                            "kind": {"enum": ["zero"]},
                        },
                        "additionalProperties": False,
                    },
                    "n": {"type": "integer", "minimum": 10},
                    "t_grid": _NUM_LIST,
                    "noise_centered": {"type": "boolean"},
                },
                "required": ["xi", "drift", "noise", "n"],
                "additionalProperties": False,
            },
            "trials": {"type": "integer", "minimum": 2},
            "reference": {
                "type": "object",
                "properties": {
                    "steps": {"type": "integer", "minimum": 100},
                    "max_lag": {"type": "integer", "minimum": 1},
                    "gk_samples": {"type": "integer", "minimum": 2},
                },
                "additionalProperties": False,
            },
            "expect": {
                "type": "object",
                "properties": {
                    "time": {"type": "number"},
                    "mean": {"type": "number"},
                    "var": {"type": "number"},
                    "ks_times": _NUM_LIST,
                },
                "additionalProperties": False,
            },
        },
        ["map", "slow_system", "trials"],
    ),
    "green_kubo": _schema(
        {
            "map": _MAP_SCHEMA,
            "observable": _OBS_NAME,
            "observables": {"type": "array", "items": _OBS_NAME, "minItems": 1},
            "max_lag": {"type": "integer", "minimum": 1},
            "samples": {"type": "integer", "minimum": 2},
            "expect": {
                "type": "object",
                "properties": {
                    "sigma": {"type": "number"},
                    "sigma_tol": {"type": "number"},
                    "drift": {"type": "number"},
                    "drift_tol": {"type": "number"},
                },
                "additionalProperties": False,
            },
        },
        ["map", "max_lag", "samples"],
    ),
    "iwip_blocks": _schema(
        {
            "map": _MAP_SCHEMA,
            "observable": _OBS_NAME,
            "gamma": {"type": "number"},
            "scheme": {
                "type": "object",
                "properties": {
                    "a_exp": {"type": "number"},
                    "b_exp": {"type": "number"},
                },
                "required": ["a_exp", "b_exp"],
                "additionalProperties": False,
            },
            "n_list": _INT_LIST,
            "t": {"type": "number"},
            "trials": {"type": "integer", "minimum": 2},
            "diag_n": {"type": "integer"},
            "gk_max_lag": {"type": "integer", "minimum": 1},
            "gk_samples": {"type": "integer", "minimum": 2},
        },
        ["map", "gamma", "n_list", "trials"],
    ),
    "fcb_probe": _schema(
        {
            "map": _MAP_SCHEMA,
            "factors": {"type": "array", "items": _OBS_NAME, "minItems": 1},
            "p_split": {"type": "integer", "minimum": 0},
            "gaps": _INT_LIST,
            "k_vec": _INT_LIST,
            "samples": {"type": "integer", "minimum": 2},
        },
        ["map", "factors", "p_split", "samples"],
    ),
    "tails": _schema(
        {
            "alpha": {"type": "number"},
            "k_list": _INT_LIST,
            "samples": {"type": "integer", "minimum": 1},
            "expect": {
                "type": "object",
                "properties": {"tol": {"type": "number"}},
                "additionalProperties": False,
            },
        },
        ["alpha", "k_list", "samples"],
    ),
    "transfer_decay": _schema(
        {
            "map": _MAP_SCHEMA,
            "observable": _OBS_NAME,
            "bins": {"type": "integer", "minimum": 64},
            "samples_per_bin": {"type": "integer", "minimum": 1},
            "k_max": {"type": "integer", "minimum": 10},
            "fit_min_k": {"type": "integer", "minimum": 1},
            "expect": {
                "type": "object",
                "properties": {"tol": {"type": "number"}},
                "additionalProperties": False,
            },
        },
        ["map", "k_max"],
    ),
    "stability": _schema(
        {
            "alpha_seq": _NUM_LIST,
            "alpha_inf": {"type": "number"},
            "observable": _OBS_NAME,
            "samples": {"type": "integer", "minimum": 2},
            "a2": {
                "type": "object",
                "properties": {
                    "j": {"type": "integer", "minimum": 0},
                    "a": {"type": "number"},
                    "z_grid": {"type": "integer", "minimum": 2},
                    "samples": {"type": "integer", "minimum": 1},
                },
                "required": ["j", "a"],
                "additionalProperties": False,
            },
        },
        ["alpha_seq", "alpha_inf", "samples"],
    ),
    "triangular_array": _schema(
        {
            "sigma": {"type": "number"},
            "p_exp": {"type": "number"},
            "k_n": {"type": "integer", "minimum": 1},
            "trials": {"type": "integer", "minimum": 2},
        },
        ["sigma", "k_n", "trials"],
    ),
}

_DEFAULTS: dict[str, dict] = {
    "homogenise": {
        "reference": {"steps": 1000, "max_lag": 256, "gk_samples": 128},
    },
    "green_kubo": {},
    "iwip_blocks": {"t": 1.0, "observable": "cos2pix", "gk_max_lag": 256, "gk_samples": 64},
    "fcb_probe": {},
    "tails": {"expect": {"tol": 0.3}},
    "transfer_decay": {
        "observable": "centered_coordinate",
        "bins": 4096,
        "samples_per_bin": 64,
        "expect": {"tol": 0.3},
    },
    "stability": {"observable": "coordinate"},
    "triangular_array": {"p_exp": 1.5},
}

EXPERIMENTS: dict[str, str] = {
    "homogenise": "ensemble of the rescaled slow process driven by a fast map, "
    "compared weakly against its limiting diffusion",
    "green_kubo": "limiting covariance and drift matrices summed from the "
    "lagged autocovariance series of an observable",
    "iwip_blocks": "big/small block diagnostics: remainder-term norms across n "
    "and within-block diagonal sums against the drift target",
    "fcb_probe": "joint-versus-split orbit integrals of product test functions "
    "across increasing time gaps",
    "tails": "first-return-time tail of the intermittent map on [1/2, 1] with "
    "a power-law exponent fit",
    "transfer_decay": "binned transfer-operator decay of a centred observable, "
    "sup-normed over the inducing window",
    "stability": "physical-measure integrals along a parameter sequence plus "
    "trajectory-discrepancy fractions against the limit map",
    "triangular_array": "independent Gaussian array harness for the joint "
    "sum / iterated-sum limit law",
}


class ConfigError(Exception):
    pass


def _deep_merge(defaults: dict, override: dict) -> dict:
    out = copy.deepcopy(defaults)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def validate_config(raw: dict) -> dict:
    """Validate a raw config dict and return it fully resolved with defaults."""
    import jsonschema

    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    exp = raw.get("experiment")
    if exp not in _SCHEMAS:
        raise ConfigError(
            f"unknown or missing experiment {exp!r}; choose from {sorted(_SCHEMAS)}"
        )
    try:
        jsonschema.validate(raw, _SCHEMAS[exp])
    except jsonschema.ValidationError as err:
        path = ".".join(str(p) for p in err.absolute_path)
        where = f" at {path}" if path else ""
        raise ConfigError(f"invalid config{where}: {err.message}") from None
    merged = _deep_merge({**_COMMON_DEFAULTS, **_DEFAULTS[exp]}, raw)
    merged["experiment"] = exp
    if exp == "green_kubo" and "observable" not in merged and "observables" not in merged:
        raise ConfigError("green_kubo needs 'observable' or 'observables'")
    if exp == "fcb_probe" and "gaps" not in merged and "k_vec" not in merged:
        raise ConfigError("fcb_probe needs 'gaps' or 'k_vec'")
    if exp == "homogenise":
        ss = merged["slow_system"]
        ss.setdefault("d", len(ss["xi"]))
        ss.setdefault("t_grid", np.linspace(0.0, 1.0, 101).tolist())
        ss.setdefault("noise_centered", ss["noise"].get("kind") != "zero")
    return merged


# ---------------------------------------------------------------------------
# result emission


@dataclass
class Check:
    name: str
    value: float
    target: float
    tol: float
    mode: str = "abs"  # abs: |value-target| <= tol; less: value < target

    @property
    def passed(self) -> bool:
        if self.mode == "less":
            return self.value < self.target
        return abs(self.value - self.target) <= self.tol

    def line(self) -> str:
        return (
            f"{self.name}: value={_fmt(self.value)} target={_fmt(self.target)} "
            f"tol={_fmt(self.tol)} {'PASS' if self.passed else 'FAIL'}"
        )


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _row(statistic, value, stderr="", time="", ci="", cj=""):
    return {
        "time": time,
        "coordinate_i": ci,
        "coordinate_j": cj,
        "statistic": statistic,
        "value": value,
        "stderr": stderr,
    }


def _write_results(path: Path, experiment: str, params: dict, rows: list[dict]):
    import csv

    cols = ["experiment", *params.keys(), *_CSV_FIXED]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in rows:
            writer.writerow(
                [experiment]
                + [_fmt(v) for v in params.values()]
                + [_fmt(row[c]) for c in _CSV_FIXED]
            )


def _ensemble_rows(stats: fastslow.EnsembleStats, extra: dict | None = None):
    rows = []
    nt, d = stats.mean.shape
    for t_idx in range(nt):
        t = float(stats.times[t_idx])
        for i in range(d):
            rows.append(
                _row("mean", stats.mean[t_idx, i], stats.mean_stderr[t_idx, i], t, i)
            )
            rows.append(
                _row(
                    "variance",
                    stats.cov[t_idx, i, i],
                    stats.var_stderr[t_idx, i],
                    t,
                    i,
                )
            )
            for j in range(i + 1, d):
                rows.append(_row("covariance", stats.cov[t_idx, i, j], "", t, i, j))
    if extra:
        for row in rows:
            row.update(extra)
    return rows


# ---------------------------------------------------------------------------
# experiment runners


def _drift_field(block: dict) -> fastslow.Field:
    kind = block["kind"]
    if kind == "linear":
        return fastslow.linear_drift(block.get("rate", -1.0))
    if kind == "constant":
        return fastslow.constant_drift(block["value"])
    return fastslow.zero_field


def _run_homogenise(conf, cfg, workers):
    ss = conf["slow_system"]
    desc = MapDescriptor.from_config(conf["map"])
    d = ss["d"]
    t_grid = np.asarray(ss["t_grid"], dtype=np.float64)
    drift = _drift_field(ss["drift"])
    noise_block = ss["noise"]
    if noise_block.get("kind") == "zero":
        noise_obs = None
        noise = fastslow.zero_field
    else:
        noise_obs = observables.builtin(noise_block["observable"])
        noise = fastslow.observable_noise(noise_obs)
    spec = fastslow.SlowSystemSpec(
        d=d,
        xi=np.asarray(ss["xi"], dtype=np.float64),
        drift_a=drift,
        noise_b=noise,
        n=ss["n"],
        map=desc,
        t_grid=t_grid,
        noise_centered=ss["noise_centered"],
    )
    stats = fastslow.run_ensemble(spec, conf["trials"], cfg.with_stream(_STREAM_MAIN), workers)
    rows = _ensemble_rows(stats)
    params = {
        "source": "slow",
        "map": desc.kind.value,
        "alpha": desc.alpha if desc.alpha is not None else "",
        "n": ss["n"],
        "trials": conf["trials"],
    }
    # emitted in two passes so the source column distinguishes the ensembles
    all_rows = [dict(r, source="slow") for r in rows]

    ref = conf["reference"]
    checks: list[Check] = []
    wd = None
    ref_stats = None
    if noise_obs is not None:
        gk = statistics.green_kubo(
            noise_obs if noise_obs.arity == d else noise_obs,
            desc,
            ref["max_lag"],
            ref["gk_samples"],
            cfg.with_stream(_STREAM_GK),
            workers,
        )
        sde_spec = sdelimit.SdeSpec(
            d=d,
            drift=lambda x: _drift_field(ss["drift"])(x, ()),
            diffusion_matrix=sdelimit.psd_sqrt(gk.sigma),
            xi=np.asarray(ss["xi"], dtype=np.float64),
            steps=ref["steps"],
            trials=conf["trials"],
            t_grid=t_grid,
        )
        ref_stats = sdelimit.euler_maruyama(sde_spec, cfg.with_stream(_STREAM_REF), workers)
        all_rows += [dict(r, source="sde") for r in _ensemble_rows(ref_stats)]
        for i in range(d):
            for j in range(d):
                all_rows.append(
                    dict(
                        _row("gk_sigma", gk.sigma[i, j], gk.stderr[i, j], "", i, j),
                        source="slow",
                    )
                )
        wd = sdelimit.weak_distance(stats, ref_stats)
        for t_idx, t in enumerate(wd.times):
            for i in range(d):
                all_rows.append(
                    dict(
                        _row("ks_stat", wd.ks_stat[t_idx, i], "", float(t), i),
                        source="both",
                    )
                )
        all_rows.append(dict(_row("ks_threshold", wd.ks_threshold), source="both"))

    expect = conf.get("expect")
    if expect:
        t_check = expect.get("time", 1.0)
        t_idx = stats.time_index(t_check)
        if "mean" in expect:
            checks.append(
                Check(
                    f"mean_X({t_check})",
                    float(stats.mean[t_idx, 0]),
                    expect["mean"],
                    3.0 * float(stats.mean_stderr[t_idx, 0]),
                )
            )
        if "var" in expect:
            checks.append(
                Check(
                    f"var_X({t_check})",
                    float(stats.cov[t_idx, 0, 0]),
                    expect["var"],
                    3.0 * float(stats.var_stderr[t_idx, 0]),
                )
            )
        if wd is not None:
            for kt in expect.get("ks_times", []):
                k_idx = stats.time_index(kt)
                checks.append(
                    Check(
                        f"ks_stat({kt})_below_threshold",
                        float(wd.ks_stat[k_idx].max()),
                        wd.ks_threshold,
                        0.0,
                        mode="less",
                    )
                )

    outputs = {}
    if ref_stats is not None:
        term = []
        for src, st in (("slow", stats), ("sde", ref_stats)):
            for i in range(d):
                for val in st.ecdf[-1, i]:
                    term.append((src, i, val))
        outputs["terminal_samples.csv"] = term
    return params, all_rows, checks, outputs


def _run_green_kubo(conf, cfg, workers):
    desc = MapDescriptor.from_config(conf["map"])
    names = conf.get("observables") or [conf["observable"]]
    obs_list = [observables.builtin(n) for n in names]
    obs = obs_list[0] if len(obs_list) == 1 else observables.stack(obs_list)
    gk = statistics.green_kubo(
        obs, desc, conf["max_lag"], conf["samples"], cfg.with_stream(_STREAM_MAIN), workers
    )
    d = obs.arity
    rows = []
    for i in range(d):
        for j in range(d):
            rows.append(_row("sigma", gk.sigma[i, j], gk.stderr[i, j], "", i, j))
            rows.append(_row("drift_e", gk.drift_e[i, j], "", "", i, j))
            rows.append(_row("c0", gk.c0[i, j], "", "", i, j))
    rows.append(_row("truncation_movement", gk.truncation_movement))
    params = {
        "map": desc.kind.value,
        "alpha": desc.alpha if desc.alpha is not None else "",
        "observable": "+".join(names),
        "max_lag": conf["max_lag"],
        "samples": conf["samples"],
    }
    checks = []
    expect = conf.get("expect")
    if expect and d == 1:
        if "sigma" in expect:
            checks.append(
                Check(
                    "sigma",
                    float(gk.sigma[0, 0]),
                    expect["sigma"],
                    expect.get("sigma_tol", 0.02),
                )
            )
        checks.append(
            Check(
                "drift_e",
                float(gk.drift_e[0, 0]),
                expect.get("drift", 0.0),
                expect.get("drift_tol", 0.02),
            )
        )
    return params, rows, checks, {}


def _run_iwip_blocks(conf, cfg, workers):
    desc = MapDescriptor.from_config(conf["map"])
    obs = observables.builtin(conf["observable"])
    gamma = conf["gamma"]
    t = conf["t"]
    rows = []
    checks = []
    norms_by_n: dict[int, iwip.SmallBlockNorms] = {}
    schemes: dict[int, iwip.BlockScheme] = {}
    searched = None
    for n in conf["n_list"]:
        scheme = None
        if "scheme" in conf:
            cand = iwip.make_block_scheme(
                gamma, n, conf["scheme"]["a_exp"], conf["scheme"]["b_exp"]
            )
            rows.append(
                _row(f"scheme_feasible_n{n}", 1.0 if cand.feasible else 0.0)
            )
            if cand.feasible:
                scheme = cand
        if scheme is None:
            # fall back to the max-slack exponents when none were given
            # or the configured pair fails its inequalities at runtime
            if searched is None:
                searched = iwip.search_block_scheme(gamma)
                if not searched.feasible:
                    raise RuntimeError(
                        f"no feasible exponents at gamma={gamma}: {searched.violations}"
                    )
            built = iwip.make_block_scheme(gamma, n, searched.a_exp, searched.b_exp)
            if not built.feasible:
                raise RuntimeError(
                    f"no feasible block scheme at gamma={gamma}, n={n}: {built.violations}"
                )
            scheme = built
        schemes[n] = scheme
        norms = iwip.small_block_terms(
            obs, desc, n, scheme, t, conf["trials"], cfg.with_stream(_STREAM_MAIN), workers
        )
        norms_by_n[n] = norms
        for stat, val in zip(("norm_I2", "norm_J2", "norm_J3"), norms):
            rows.append(_row(stat, val, "", t, "", f"n={n}"))
        rows.append(_row("scheme_p", scheme.p, "", "", "", f"n={n}"))
        rows.append(_row("scheme_q", scheme.q, "", "", "", f"n={n}"))
        rows.append(_row("scheme_k", scheme.k, "", "", "", f"n={n}"))

    ns = sorted(norms_by_n)
    if len(ns) >= 2:
        for idx, stat in enumerate(("norm_I2", "norm_J2", "norm_J3")):
            seq = [norms_by_n[n][idx] for n in ns]
            ok = all(b < a for a, b in zip(seq, seq[1:]))
            checks.append(Check(f"{stat}_strictly_decreasing", float(ok), 1.0, 0.0))

    n_diag = conf.get("diag_n", max(conf["n_list"]))
    diag_scheme = schemes.get(n_diag)
    if diag_scheme is None:
        exps = iwip.search_block_scheme(gamma)
        diag_scheme = iwip.make_block_scheme(gamma, n_diag, exps.a_exp, exps.b_exp)
        if not diag_scheme.feasible:
            raise RuntimeError(f"no feasible scheme for diag_n={n_diag}")
    diag = iwip.diagonal_sum(
        obs,
        desc,
        n_diag,
        diag_scheme,
        t,
        conf["trials"],
        cfg.with_stream(_STREAM_AUX),
        workers,
        gk_max_lag=conf["gk_max_lag"],
        gk_samples=conf["gk_samples"],
    )
    d = obs.arity
    for i in range(d):
        for j in range(d):
            rows.append(
                _row("diagonal_estimate", diag.estimate[i, j], diag.stderr[i, j], t, i, j)
            )
            rows.append(_row("diagonal_target", diag.target[i, j], "", t, i, j))
    combined_se = np.sqrt(diag.stderr**2 + diag.target_stderr**2)
    checks.append(
        Check(
            "diagonal_sum_within_3se_of_target",
            float(np.max(np.abs(diag.estimate - diag.target))),
            0.0,
            3.0 * float(np.max(combined_se)),
        )
    )
    params = {
        "map": desc.kind.value,
        "gamma": gamma,
        "trials": conf["trials"],
        "observable": conf["observable"],
    }
    return params, rows, checks, {}


def _run_fcb_probe(conf, cfg, workers):
    desc = MapDescriptor.from_config(conf["map"])
    factors = [observables.builtin(n) for n in conf["factors"]]
    q = len(factors)
    p = conf["p_split"]
    rows = []
    results = []
    if "k_vec" in conf:
        scans = [(None, conf["k_vec"])]
    else:
        if not 1 <= p < q:
            raise ConfigError("gap scan needs 1 <= p_split < len(factors)")
        scans = [
            (g, list(range(p)) + [p - 1 + g + j for j in range(q - p)])
            for g in conf["gaps"]
        ]
    for gap, k_vec in scans:
        est = statistics.fcb_probe(
            factors, desc, k_vec, p, conf["samples"], cfg.with_stream(_STREAM_MAIN), workers
        )
        results.append((gap, est))
        label = "" if gap is None else f"gap={gap}"
        rows.append(_row("fcb_lhs", est.estimate, est.stderr, "", "", label))
    checks = []
    if len(results) >= 2 and results[0][0] is not None:
        first, last = results[0][1], results[-1][1]
        checks.append(
            Check(
                "fcb_lhs_decays_over_gaps",
                last.estimate,
                first.estimate + 2.0 * (first.stderr + last.stderr),
                0.0,
                mode="less",
            )
        )
    params = {
        "map": desc.kind.value,
        "factors": "+".join(conf["factors"]),
        "p_split": p,
        "samples": conf["samples"],
    }
    return params, rows, checks, {}


def _run_tails(conf, cfg, workers):
    alpha = conf["alpha"]
    result = statistics.return_time_tail(
        alpha, conf["k_list"], conf["samples"], cfg.with_stream(_STREAM_MAIN)
    )
    rows = [
        _row("tail", float(tv), "", "", "", f"k={k}")
        for k, tv in zip(sorted(conf["k_list"]), result.tail)
    ]
    rows.append(_row("fit_exponent", result.fit.exponent))
    rows.append(_row("fit_r_squared", result.fit.r_squared))
    checks = [
        Check(
            "tail_exponent",
            result.fit.exponent,
            -1.0 / alpha,
            conf["expect"]["tol"],
        )
    ]
    params = {"alpha": alpha, "samples": conf["samples"]}
    return params, rows, checks, {}


def _run_transfer_decay(conf, cfg, workers):
    desc = MapDescriptor.from_config(conf["map"])
    obs = observables.builtin(conf["observable"])
    op = transfer.ulam_matrix(desc, conf["bins"], conf["samples_per_bin"])
    result = transfer.transfer_decay(
        op, obs, conf["k_max"], fit_min_k=conf.get("fit_min_k")
    )
    rows = [
        _row("sup_deviation", float(v), "", "", "", f"k={k}")
        for k, v in enumerate(result.deviations, start=1)
    ]
    rows.append(_row("fit_exponent", result.fit.exponent))
    rows.append(_row("fit_r_squared", result.fit.r_squared))
    checks = []
    if desc.kind is MapKind.LSV:
        target = -(1.0 / desc.alpha - 1.0)
        checks.append(
            Check("decay_exponent", result.fit.exponent, target, conf["expect"]["tol"])
        )
    else:
        k30 = min(30, conf["k_max"]) - 1
        checks.append(
            Check(
                "deviation_at_k30_below_1e-6",
                float(result.deviations[k30]),
                1e-6,
                0.0,
                mode="less",
            )
        )
    params = {
        "map": desc.kind.value,
        "alpha": desc.alpha if desc.alpha is not None else "",
        "bins": conf["bins"],
        "observable": conf["observable"],
        "k_max": conf["k_max"],
    }
    return params, rows, checks, {}


def _run_stability(conf, cfg, workers):
    alphas = list(conf["alpha_seq"])
    alpha_inf = conf["alpha_inf"]
    obs = observables.builtin(conf["observable"])
    ests = stability_probe(
        obs, alphas + [alpha_inf], conf["samples"], cfg.with_stream(_STREAM_MAIN)
    )
    target = ests[-1]
    rows = []
    for alpha, est in zip(alphas + [alpha_inf], ests):
        rows.append(_row("integral_estimate", est.estimate, est.stderr, "", "", f"alpha={alpha}"))
    checks = []
    devs = [abs(e.estimate - target.estimate) for e in ests[:-1]]
    ok = all(
        d2 <= d1 + 2.0 * (e1.stderr + e2.stderr)
        for (d1, e1), (d2, e2) in zip(
            zip(devs, ests[:-1]), zip(devs[1:], ests[1:-1])
        )
    )
    checks.append(Check("stability_monotone_approach", float(ok), 1.0, 0.0))

    if "a2" in conf:
        blk = conf["a2"]
        fracs = []
        for alpha in alphas:
            frac = a2_probe(
                blk["j"],
                blk["a"],
                alpha,
                alpha_inf,
                blk.get("samples", conf["samples"]),
                cfg.with_stream(_STREAM_AUX),
                z_grid=blk.get("z_grid", 64),
            )
            fracs.append(frac)
            rows.append(_row("a2_fraction", frac, "", "", "", f"alpha={alpha}"))
        ok = all(b <= a for a, b in zip(fracs, fracs[1:])) and fracs[-1] < fracs[0]
        checks.append(Check("a2_fraction_decreasing", float(ok), 1.0, 0.0))
    params = {
        "alpha_inf": alpha_inf,
        "observable": conf["observable"],
        "samples": conf["samples"],
    }
    return params, rows, checks, {}


def _run_triangular_array(conf, cfg, workers):
    stats = iwip.triangular_array_demo(
        conf["sigma"], conf["p_exp"], conf["k_n"], conf["trials"],
        cfg.with_stream(_STREAM_MAIN), workers,
    )
    sigma = float(conf["sigma"])
    k_n = conf["k_n"]
    rows = []
    for i, label in enumerate(("W", "WW")):
        rows.append(_row(f"mean_{label}", stats.mean[0, i], stats.mean_stderr[0, i]))
        rows.append(_row(f"var_{label}", stats.cov[0, i, i], stats.var_stderr[0, i]))
    checks = [
        Check(
            "var_W(1)",
            float(stats.cov[0, 0, 0]),
            sigma,
            3.0 * float(stats.var_stderr[0, 0]),
        ),
        Check(
            "mean_WW(1)",
            float(stats.mean[0, 1]),
            0.0,
            3.0 * float(stats.mean_stderr[0, 1]),
        ),
        Check(
            "var_WW(1)",
            float(stats.cov[0, 1, 1]),
            sigma**2 * 0.5 * (1.0 - 1.0 / k_n),
            3.0 * float(stats.var_stderr[0, 1]),
        ),
    ]
    params = {"sigma": sigma, "k_n": k_n, "trials": conf["trials"]}
    return params, rows, checks, {}


_RUNNERS = {
    "homogenise": _run_homogenise,
    "green_kubo": _run_green_kubo,
    "iwip_blocks": _run_iwip_blocks,
    "fcb_probe": _run_fcb_probe,
    "tails": _run_tails,
    "transfer_decay": _run_transfer_decay,
    "stability": _run_stability,
    "triangular_array": _run_triangular_array,
}


# ---------------------------------------------------------------------------
# entry points


def run_experiment(
    config_path: str | Path,
    seed: int | None = None,
    workers: int | None = None,
    output_dir: str | None = None,
) -> int:
    """Execute the experiment named in the config file.

    Returns the process exit code.  Flag overrides beat the config;
    the HOMOG_WORKERS environment variable beats both for workers.
    """
    try:
        raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
        conf = validate_config(raw)
    except (OSError, json.JSONDecodeError, ConfigError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1

    if seed is not None:
        conf["root_seed"] = int(seed)
    if workers is not None:
        conf["workers"] = int(workers)
    if output_dir is not None:
        conf["output_dir"] = str(output_dir)
    env_workers = os.environ.get("HOMOG_WORKERS")
    if env_workers:
        conf["workers"] = max(1, int(env_workers))

    out_dir = Path(conf["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = SamplerConfig(root_seed=conf["root_seed"], burn_in=conf["burn_in"])

    try:
        params, rows, checks, outputs = _RUNNERS[conf["experiment"]](
            conf, cfg, conf["workers"]
        )
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # runtime abort
        print(f"runtime abort: {err}", file=sys.stderr)
        return 2

    _write_results(out_dir / "results.csv", conf["experiment"], params, rows)
    manifest = dict(conf)
    manifest["build_version"] = __version__
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    lines = [check.line() for check in checks] or ["no oracle checks for this run"]
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for name, table in outputs.items():
        import csv

        with (out_dir / name).open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["source", "coordinate", "value"])
            for entry in table:
                writer.writerow([entry[0], entry[1], _fmt(float(entry[2]))])
    print(f"wrote {out_dir}/results.csv ({len(rows)} rows, {len(checks)} checks)")
    for line in lines:
        print(line)
    return 0


def list_experiments(machine: bool = False) -> str:
    """Registry listing; the machine form emits config templates that validate."""
    if not machine:
        width = max(len(k) for k in EXPERIMENTS)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in EXPERIMENTS.items())
    out = {
        name: {"description": desc, "template": _TEMPLATES[name]}
        for name, desc in EXPERIMENTS.items()
    }
    return json.dumps(out, indent=2, sort_keys=True)


_TEMPLATES: dict[str, dict] = {
    "homogenise": {
        "experiment": "homogenise",
        "map": {"kind": "Doubling"},
        "slow_system": {
            "xi": [1.0],
            "drift": {"kind": "linear", "rate": -1.0},
            "noise": {"observable": "cos2pix"},
            "n": 1000,
        },
        "trials": 512,
    },
    "green_kubo": {
        "experiment": "green_kubo",
        "map": {"kind": "Doubling"},
        "observable": "cos2pix",
        "max_lag": 64,
        "samples": 64,
    },
    "iwip_blocks": {
        "experiment": "iwip_blocks",
        "map": {"kind": "Doubling"},
        "gamma": 2.0,
        "n_list": [1000, 10000],
        "trials": 256,
    },
    "fcb_probe": {
        "experiment": "fcb_probe",
        "map": {"kind": "Doubling"},
        "factors": ["centered_coordinate", "centered_coordinate"],
        "p_split": 1,
        "gaps": [1, 2, 4, 8],
        "samples": 4096,
    },
    "tails": {
        "experiment": "tails",
        "alpha": 0.4,
        "k_list": [1, 2, 5, 10, 20, 50, 100],
        "samples": 100000,
    },
    "transfer_decay": {
        "experiment": "transfer_decay",
        "map": {"kind": "LSV", "alpha": 0.5},
        "bins": 4096,
        "k_max": 256,
    },
    "stability": {
        "experiment": "stability",
        "alpha_seq": [0.4, 0.35, 0.325],
        "alpha_inf": 0.3,
        "samples": 4096,
        "a2": {"j": 3, "a": 0.05},
    },
    "triangular_array": {
        "experiment": "triangular_array",
        "sigma": 1.0,
        "k_n": 1000,
        "trials": 4096,
    },
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="homoglab", description="fast-slow system experiment runner"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run an experiment from a JSON config")
    run_p.add_argument("config")
    run_p.add_argument("--seed", type=int, default=None, help="override root_seed")
    run_p.add_argument("--workers", type=int, default=None, help="override workers")
    run_p.add_argument("--output-dir", default=None, help="override output_dir")
    list_p = sub.add_parser("list", help="list available experiments")
    list_p.add_argument(
        "--machine", action="store_true", help="emit JSON with config templates"
    )
    args = parser.parse_args(argv)
    if args.command == "list":
        print(list_experiments(machine=args.machine))
        return 0
    return run_experiment(
        args.config, seed=args.seed, workers=args.workers, output_dir=args.output_dir
    )
