"""Command-line front end: dataset generation, training, attacks and the
evaluation reports, glued into reproducible runs.

Every command takes flags first, an optional ``key = value`` config file
second (flags win), and writes the effective settings to
``resolved_config.txt`` in the output directory next to its artifacts.
Exit codes: 0 ok, 2 usage/config, 3 file format, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import evaluation, models
from .attacks import AttackConfig, run_attack, schedule_for_total_steps
from .errors import ConfigError, ContractViolationError, FormatError, NumericalError

LINF_DEFAULTS = (8.0 / 255.0, 2.0 / 255.0)
L2_DEFAULTS = (1.0, 0.2)


def _cast(value: str, kind, key: str):
    if kind is bool:
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"key {key!r}: expected a boolean, got {value!r}")
    try:
        return kind(value)
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: {exc}") from None


def _parse_config_file(path: str, keys: dict) -> dict:
    vals = {}
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for ln, line in enumerate(lines, 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise ConfigError(f"{path}:{ln}: expected 'key = value', got {s!r}")
        key, raw = (part.strip() for part in s.split("=", 1))
        if key not in keys:
            raise ConfigError(f"{path}:{ln}: unknown key {key!r} (known: {', '.join(sorted(keys))})")
        vals[key] = _cast(raw, keys[key][0], key)
    return vals


def _merge(args, keys: dict) -> dict:
    file_vals = _parse_config_file(args.config, keys) if getattr(args, "config", None) else {}
    out = {}
    for key, (_, default) in keys.items():
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            out[key] = flag_val
        elif key in file_vals:
            out[key] = file_vals[key]
        else:
            out[key] = default
    return out


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_resolved(out_dir: str, command: str, settings: dict) -> None:
    path = os.path.join(out_dir, "resolved_config.txt")
    with open(path, "w") as f:
        f.write(f"command = {command}\n")
        for key in sorted(settings):
            f.write(f"{key} = {_fmt(settings[key])}\n")


def _ensure_out(args) -> str:
    out = args.out
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


def _resolve_threads(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get("SDM_THREADS", "").strip()
    return int(env) if env else 1


def _load_model(path: str) -> models.MlpModel:
    if not os.path.exists(path):
        raise ConfigError(f"model file not found: {path}")
    return models.load_model(path)


def _load_dataset(path: str) -> models.DatasetSplit:
    if not os.path.exists(path):
        raise ConfigError(f"dataset file not found: {path}")
    return models.load_dataset(path)


def _write_json(path: str, payload) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=2)
        f.write("\n")


def _parse_schedule(text):
    if text is None:
        return None
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != 3:
        raise ConfigError(f"schedule must be 'cycles,stages,steps', got {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"schedule must be three integers, got {text!r}") from None


def _attack_config(settings: dict) -> AttackConfig:
    eps_default, alpha_default = LINF_DEFAULTS if settings["norm"] == "linf" else L2_DEFAULTS
    eps = settings["eps"] if settings["eps"] is not None else eps_default
    alpha = settings["alpha"] if settings["alpha"] is not None else alpha_default
    return AttackConfig(
        method=settings["method"],
        norm=settings["norm"],
        epsilon=eps,
        alpha=alpha,
        total_steps=settings["steps"],
        schedule=_parse_schedule(settings.get("schedule")),
        random_start=settings.get("random_start"),
        clamp01=settings.get("clamp01", True),
        l2_step_mode=settings.get("l2_step_mode", "normalized"),
        early_stop=settings.get("early_stop", False),
        seed=settings["seed"],
        threads=_resolve_threads(settings.get("threads")),
    )


GEN_KEYS = {
    "kind": (str, None),
    "n": (int, None),
    "d": (int, None),
    "k": (int, None),
    "spread": (float, 0.08),
    "seed": (int, 0),
}

TRAIN_KEYS = {
    "hidden": (str, "32,32"),
    "epochs": (int, 50),
    "batch_size": (int, 64),
    "lr": (float, 0.1),
    "seed": (int, 0),
    "adv_eps": (float, 0.0),
    "adv_alpha": (float, 0.0),
    "adv_steps": (int, 0),
}

ATTACK_KEYS = {
    "method": (str, "pgd"),
    "norm": (str, "linf"),
    "eps": (float, None),
    "alpha": (float, None),
    "steps": (int, 100),
    "schedule": (str, None),
    "random_start": (bool, None),
    "clamp01": (bool, True),
    "l2_step_mode": (str, "normalized"),
    "early_stop": (bool, False),
    "seed": (int, 0),
    "threads": (int, None),
}

EVAL_KEYS = {
    "threads": (int, None),
    "interference": (bool, False),
    "grid_shape": (str, None),
    "seed": (int, 0),
}

COMPARE_KEYS = {
    "methods": (str, "pgd,margin_pgd,sdm"),
    "norm": (str, "linf"),
    "eps": (float, None),
    "alpha": (float, None),
    "steps": (int, 100),
    "seed": (int, 0),
    "threads": (int, None),
}

LANDSCAPE_KEYS = {
    "index": (int, 0),
    "eps": (float, LINF_DEFAULTS[0]),
    "samples": (int, 500),
    "grid": (int, 64),
    "seed": (int, 0),
}

BENCH_KEYS = {
    "methods": (str, "pgd,sdm"),
    "steps": (int, 100),
    "repeats": (int, 5),
    "seed": (int, 0),
}


def cmd_gen_data(args) -> int:
    settings = _merge(args, GEN_KEYS)
    for key in ("kind", "n", "d", "k"):
        if settings[key] is None:
            raise ConfigError(f"gen-data needs {key!r} (flag --{key.replace('_', '-')} or config key)")
    out = _ensure_out(args)
    data = models.synth_dataset(
        settings["kind"], settings["n"], settings["d"], settings["k"], settings["spread"], settings["seed"]
    )
    models.save_dataset(data, os.path.join(out, "dataset.sdmd"))
    _write_resolved(out, "gen-data", settings)
    return 0


def cmd_train(args) -> int:
    settings = _merge(args, TRAIN_KEYS)
    out = _ensure_out(args)
    data = _load_dataset(args.data)
    try:
        hidden = [int(h) for h in str(settings["hidden"]).split(",") if h.strip()]
    except ValueError:
        raise ConfigError(f"hidden must be comma-separated integers, got {settings['hidden']!r}") from None
    model = models.init_mlp([data.d] + hidden + [data.k], settings["seed"])
    cfg = models.TrainConfig(
        epochs=settings["epochs"],
        batch_size=settings["batch_size"],
        lr=settings["lr"],
        seed=settings["seed"],
        adv_epsilon=settings["adv_eps"],
        adv_alpha=settings["adv_alpha"],
        adv_steps=settings["adv_steps"],
    )
    model, trace = models.train(model, data, cfg)
    models.save_model(model, os.path.join(out, "model.sdmw"))
    _write_json(
        os.path.join(out, "metrics.json"),
        {
            "final_accuracy": models.accuracy(model, data.inputs, data.labels),
            "epochs": settings["epochs"],
            "adversarial": cfg.adversarial,
            "trace": trace,
        },
    )
    _write_resolved(out, "train", settings)
    return 0


def _report_from_outcome(outcome) -> evaluation.EvalReport:
    return evaluation.EvalReport(
        success=outcome.success,
        ce_loss=outcome.ce_loss,
        p_y=outcome.p_y,
        p_tau=outcome.p_tau,
        linf_norm=outcome.linf_norm,
        l2_norm=outcome.l2_norm,
    )


def cmd_attack(args) -> int:
    settings = _merge(args, ATTACK_KEYS)
    out = _ensure_out(args)
    model = _load_model(args.model)
    data = _load_dataset(args.data)
    cfg = _attack_config(settings)
    settings["threads"] = cfg.threads
    if cfg.method == "sdm":
        sched = cfg.schedule if cfg.schedule is not None else schedule_for_total_steps(cfg.total_steps)
        settings["schedule"] = f"{sched.c},{sched.n},{sched.t}"
    outcome = run_attack(model, data.inputs, data.labels, cfg)
    models.write_sdmd(os.path.join(out, "adv.sdmd"), outcome.adv, data.labels, data.k)
    _report_from_outcome(outcome).to_jsonl(os.path.join(out, "report.jsonl"))
    _write_resolved(out, "attack", settings)
    return 0


def _parse_grid_shape(text):
    if text is None:
        return None
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != 3:
        raise ConfigError(f"grid-shape must be 'channels,height,width', got {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"grid-shape must be three integers, got {text!r}") from None


def cmd_eval(args) -> int:
    settings = _merge(args, EVAL_KEYS)
    out = _ensure_out(args)
    model = _load_model(args.model)
    adv_inputs, adv_labels, _ = models.read_sdmd(args.adv)
    naturals = None
    if args.data:
        naturals = _load_dataset(args.data).inputs
    threads = _resolve_threads(settings["threads"])
    settings["threads"] = threads
    report = evaluation.evaluate(model, adv_inputs, adv_labels, naturals=naturals, threads=threads)
    report.to_jsonl(os.path.join(out, "report.jsonl"))
    if settings["interference"]:
        table = evaluation.interference_suite(
            model, adv_inputs, adv_labels, settings["seed"], _parse_grid_shape(settings["grid_shape"]), threads
        )
        _write_json(os.path.join(out, "interference.json"), table)
    _write_resolved(out, "eval", settings)
    return 0


def cmd_compare(args) -> int:
    settings = _merge(args, COMPARE_KEYS)
    out = _ensure_out(args)
    model = _load_model(args.model)
    data = _load_dataset(args.data)
    methods = [m.strip() for m in settings["methods"].split(",") if m.strip()]
    if not methods:
        raise ConfigError("compare needs at least one method")
    threads = _resolve_threads(settings["threads"])
    settings["threads"] = threads
    outcomes = {}
    for method in methods:
        cfg = _attack_config(
            {
                "method": method,
                "norm": settings["norm"],
                "eps": settings["eps"],
                "alpha": settings["alpha"],
                "steps": settings["steps"],
                "seed": settings["seed"],
                "threads": threads,
            }
        )
        outcomes[method] = run_attack(model, data.inputs, data.labels, cfg)
    comp = evaluation.success_set_analysis({m: o.success for m, o in outcomes.items()})
    payload = {
        "asr": {m: o.success_rate for m, o in outcomes.items()},
        "sets": comp.to_json(),
        "high_loss": None,
    }
    if {"pgd", "margin_pgd", "sdm"} <= set(methods):
        payload["high_loss"] = evaluation.high_loss_analysis(
            model,
            outcomes["pgd"].adv,
            outcomes["sdm"].adv,
            outcomes["margin_pgd"].adv,
            data.labels,
            threads=threads,
        )
    _write_json(os.path.join(out, "compare.json"), payload)
    _write_resolved(out, "compare", settings)
    return 0


def cmd_landscape(args) -> int:
    settings = _merge(args, LANDSCAPE_KEYS)
    out = _ensure_out(args)
    model = _load_model(args.model)
    data = _load_dataset(args.data)
    idx = settings["index"]
    if not 0 <= idx < data.n:
        raise ConfigError(f"index {idx} out of range for dataset of {data.n}")
    grid = evaluation.landscape(
        model,
        data.inputs[idx],
        int(data.labels[idx]),
        settings["eps"],
        m_samples=settings["samples"],
        grid_res=settings["grid"],
        seed=settings["seed"],
    )
    grid.to_csv(os.path.join(out, "landscape.csv"))
    _write_resolved(out, "landscape", settings)
    return 0


def cmd_bench(args) -> int:
    settings = _merge(args, BENCH_KEYS)
    out = _ensure_out(args)
    model = _load_model(args.model)
    data = _load_dataset(args.data)
    methods = [m.strip() for m in settings["methods"].split(",") if m.strip()]
    table = evaluation.timing_bench(
        model, methods, settings["steps"], data.inputs, data.labels, settings["repeats"], settings["seed"]
    )
    _write_json(os.path.join(out, "bench.json"), table)
    _write_resolved(out, "bench", settings)
    return 0


def _add_keys(sp, keys: dict) -> None:
    for key, (kind, _) in keys.items():
        flag = "--" + key.replace("_", "-")
        if kind is bool:
            sp.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction, default=None)
        else:
            sp.add_argument(flag, dest=key, type=kind, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdmax", description="Adversarial attack toolbox for small MLP classifiers.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, need_model=False, need_data=False, data_optional=False):
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--config", help="key = value config file; flags override it")
        if need_model:
            sp.add_argument("--model", required=True, help="model weight file")
        if need_data:
            sp.add_argument("--data", required=not data_optional, help="dataset file")

    sp = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(sp)
    _add_keys(sp, GEN_KEYS)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train an MLP classifier")
    common(sp, need_data=True)
    _add_keys(sp, TRAIN_KEYS)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("attack", help="run one attack over a dataset")
    common(sp, need_model=True, need_data=True)
    _add_keys(sp, ATTACK_KEYS)
    sp.set_defaults(func=cmd_attack)

    sp = sub.add_parser("eval", help="evaluate saved adversarial inputs")
    common(sp, need_model=True, need_data=True, data_optional=True)
    sp.add_argument("--adv", required=True, help="adversarial inputs file")
    _add_keys(sp, EVAL_KEYS)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("compare", help="run several attacks and compare success sets")
    common(sp, need_model=True, need_data=True)
    _add_keys(sp, COMPARE_KEYS)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("landscape", help="sample the probability landscape around one input")
    common(sp, need_model=True, need_data=True)
    _add_keys(sp, LANDSCAPE_KEYS)
    sp.set_defaults(func=cmd_landscape)

    sp = sub.add_parser("bench", help="time attack methods per gradient step")
    common(sp, need_model=True, need_data=True)
    _add_keys(sp, BENCH_KEYS)
    sp.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, ContractViolationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
