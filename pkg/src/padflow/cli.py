"""Experiment harness: config parsing, training loops, evaluation, and
report/plot emission for the toy-2D grid, the dequantization comparison, the
planar-arm IK benchmark, the VAE smoke run, and the uniform-noise bias check.

Config files are line-oriented ``dotted.key = value`` text with ``#`` comments;
command-line flags override file keys. Exit codes: 0 success, 2 config error,
3 numeric divergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from . import datasets, metrics, plots, robot, vae
from .autodiff import Adam
from .dequant import (
    DequantStrategy,
    PaddingNoiseConfig,
    dequant_bias_estimate,
    uniform_bias_paper_constant,
)
from .errors import ConfigError, NumericError, PadflowError, UsageError
from .flows import build_flow

TASKS = ("toy2d", "tabular", "ik", "vae", "bias-check")

# Fixed evaluation conditions for the conditional toy kinds.
EVAL_CONDS = {"cond_circles": (0.25, 0.5), "cond_sines": (0.3, 0.6)}


@dataclass
class ExperimentConfig:
    task: str = "toy2d"
    seed: int = None
    out: str = None
    dataset_kind: str = "circles"
    dataset_n: int = 2048
    dataset_path: str = ""
    flow_steps: int = 10
    flow_hidden: int = 32
    flow_depth: int = 2
    flow_clamp: float = 2.0
    dequant_kind: str = "paddingflow"
    dequant_p: int = 1
    dequant_a: float = 0.01
    dequant_b: float = 2.0
    dequant_c_max: float = 0.1
    dequant_half_width: float = 0.5
    train_lr: float = 2e-3
    train_lr_decay: bool = False
    train_batch: int = 256
    train_iters: int = 2000
    eval_n: int = 1000
    eval_sets: int = 3
    eval_emd_n: int = 200
    compare: str = "none,softflow,paddingflow"
    bias_n: int = 1_000_000
    bias_half_width: float = 0.5
    vae_latent: int = 4
    vae_steps: int = 600
    vae_batch: int = 64
    vae_images: int = 512
    ik_targets: int = 1000
    ik_solutions: int = 100
    tabular_grid: str = "1:0,1:0.01"

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; choose from {TASKS}")
        if self.seed is None:
            raise ConfigError("seed is mandatory")
        if self.dequant_p < 0 or self.dequant_a < 0:
            raise ConfigError("dequant.p and dequant.a must be non-negative")
        if self.task == "toy2d" and self.dataset_kind not in datasets.TOY_KINDS:
            raise ConfigError(f"unknown toy dataset {self.dataset_kind!r}")
        if self.task == "tabular":
            if not self.dataset_path:
                raise ConfigError("tabular task needs dataset.path")
            if not os.path.exists(self.dataset_path):
                raise ConfigError(f"dataset file not found: {self.dataset_path}")
        if self.task == "bias-check" and self.bias_n < 10_000:
            raise ConfigError("bias.n must be at least 1e4")
        if self.train_iters < 0:
            raise ConfigError("train.iters must be >= 0")
        if self.out is None:
            self.out = os.path.join("runs", self.task)


_KEY_MAP = {f.name.replace("_", ".", 1): f for f in fields(ExperimentConfig)}


def parse_config_text(text):
    """Parse the dotted-key = value grammar; returns a {key: raw string} dict."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value
    return out


def _coerce(spec_field, raw):
    typ = spec_field.type
    try:
        if typ == "int" or spec_field.name in ("seed",):
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ == "bool":
            low = raw.strip().lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return str(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {spec_field.name}: {raw!r}") from exc


def build_config(file_pairs, flag_pairs):
    cfg = ExperimentConfig()
    for pairs in (file_pairs, flag_pairs):
        for key, raw in pairs.items():
            f = _KEY_MAP.get(key)
            if f is None:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(cfg, f.name, _coerce(f, raw))
    cfg.validate()
    return cfg


def config_hash(cfg):
    canon = json.dumps(
        {f.name: getattr(cfg, f.name) for f in fields(ExperimentConfig)},
        sort_keys=True,
    )
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass
class RunReport:
    config: dict
    config_hash: str
    rows: list = field(default_factory=list)
    wall_clock: float = 0.0
    artifacts: list = field(default_factory=list)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(
                {
                    "config": self.config,
                    "config_hash": self.config_hash,
                    "rows": self.rows,
                    "wall_clock_s": self.wall_clock,
                    "artifacts": self.artifacts,
                },
                fh,
                indent=2,
            )


def _strategy_from_name(name, cfg):
    if name == "none":
        return DequantStrategy("none")
    if name == "uniform":
        return DequantStrategy("uniform", half_width=cfg.dequant_half_width)
    if name == "softflow":
        return DequantStrategy("softflow", c_max=cfg.dequant_c_max)
    if name == "paddingflow":
        return DequantStrategy(
            "paddingflow",
            cfg=PaddingNoiseConfig(cfg.dequant_p, cfg.dequant_a, cfg.dequant_b),
        )
    raise ConfigError(f"unknown strategy {name!r} in compare list")


def _finalize_actnorm(model):
    # Zero-iteration runs never see a data batch; fall back to identity.
    for layer in model.layers:
        if hasattr(layer, "initialized") and not layer.initialized:
            layer.init_identity()


def train_strategy(cfg, strategy, data_dim, task_cond_dim, batch_fn, seed, loss_path=None):
    """Train one flow under one dequant strategy at the shared budget.

    ``batch_fn(rng)`` yields (x batch, task condition batch or None) freshly
    per step, so dequantization noise is redrawn every iteration.
    """
    model = build_flow(
        data_dim,
        pad_dim=strategy.pad_dim(),
        cond_dim=task_cond_dim + strategy.extra_cond_dim(),
        steps=cfg.flow_steps,
        hidden=cfg.flow_hidden,
        depth=cfg.flow_depth,
        clamp=cfg.flow_clamp,
        seed=seed,
    )
    rng = np.random.default_rng(seed)
    opt = Adam(model.parameters(), lr=cfg.train_lr)
    loss_rows = []
    for step in range(cfg.train_iters):
        if cfg.train_lr_decay:
            # Cosine decay to 5% of the base rate over the run.
            frac = step / max(cfg.train_iters - 1, 1)
            opt.lr = cfg.train_lr * (0.05 + 0.95 * 0.5 * (1 + math.cos(math.pi * frac)))
        x, task_cond = batch_fn(rng)
        x_aug, cond = strategy.augment(x, task_cond, rng)
        opt.zero_grad()
        loss = model.nll_loss(x_aug, cond)
        if not np.isfinite(loss.data):
            raise NumericError(
                f"training diverged at step {step} ({strategy.label()})"
            )
        loss.backward()
        opt.step()
        if step % 50 == 0 or step == cfg.train_iters - 1:
            loss_rows.append((step, float(loss.data)))
    _finalize_actnorm(model)
    if loss_path is not None:
        with open(loss_path, "w") as fh:
            fh.write("step,loss\n")
            for step, value in loss_rows:
                fh.write(f"{step},{value!r}\n")
    return model


def _sample_stripped(model, strategy, n, task_cond, data_dim, rng):
    cond = strategy.generation_cond(task_cond, n)
    samples = model.sample(n, cond, rng)
    return strategy.postprocess(samples, data_dim)


def _toy_batch_fn(kind, batch):
    def fn(rng):
        spec = datasets.Toy2dSpec(kind, batch, seed=0)
        pts, conds = datasets.gen_toy2d(spec, rng=rng)
        return pts.points, conds

    return fn


def _metric_rows(dataset_label, model_label, ref_points, gen_sets, emd_n, rng, seed):
    """Average CD / EMD over the generated sets plus MMD-CD / MMD-EMD.

    Chamfer is evaluated generated-first: every generated point is scored
    against its nearest reference point, so off-manifold artifacts in the
    samples are penalized. The reverse order would reward models that merely
    cover the reference set while also producing junk.
    """
    ref = metrics.PointSet(ref_points)
    ref_small = metrics.PointSet(metrics.subsample(ref_points, emd_n, rng))
    cds, emds = [], []
    for gen in gen_sets:
        cds.append(metrics.chamfer(metrics.PointSet(gen), ref))
        gen_small = metrics.subsample(gen, len(ref_small), rng)
        emds.append(metrics.emd(ref_small, metrics.PointSet(gen_small)))
    rows = []
    for metric_name, measure, value in (
        ("avg", "cd", float(np.mean(cds))),
        ("avg", "emd", float(np.mean(emds))),
        ("mmd", "cd", float(np.min(cds))),
        ("mmd", "emd", float(np.min(emds))),
    ):
        rows.append(
            {
                "dataset": dataset_label,
                "model": model_label,
                "metric": metric_name,
                "measure": measure,
                "value": repr(value),
                "seed": seed,
            }
        )
    return rows


def _thread_map(fn, items):
    workers = int(os.environ.get("PFLOW_THREADS", "1"))
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_toy2d(cfg):
    report = RunReport(config=vars(cfg).copy(), config_hash=config_hash(cfg))
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    kind = cfg.dataset_kind
    cond_dim = 1 if kind.startswith("cond_") else 0
    names = [s.strip() for s in cfg.compare.split(",") if s.strip()]
    strategies = [_strategy_from_name(name, cfg) for name in names]
    batch_fn = _toy_batch_fn(kind, cfg.train_batch)

    def train_one(item):
        name, strategy = item
        loss_path = os.path.join(out, f"loss_{name}.csv")
        model = train_strategy(
            cfg, strategy, 2, cond_dim, batch_fn, cfg.seed, loss_path
        )
        return name, strategy, model, loss_path

    trained = _thread_map(train_one, list(zip(names, strategies)))

    results_path = os.path.join(out, "results.csv")
    if os.path.exists(results_path):
        os.remove(results_path)
    all_rows = []
    svg_rows = []
    eval_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    eval_conds = EVAL_CONDS.get(kind, (None,))
    # Reference data row for the scatter grid.
    ref_sets_for_plot = []
    for c in eval_conds:
        spec = datasets.Toy2dSpec(kind, cfg.eval_n, seed=cfg.seed + 7, c=c)
        ref, _ = datasets.gen_toy2d(spec)
        ref_sets_for_plot.append(ref.points)
    svg_rows.append(("data", ref_sets_for_plot))

    for name, strategy, model, loss_path in trained:
        report.artifacts.append(loss_path)
        ckpt = os.path.join(out, f"model_{name}.json")
        model.save(ckpt)
        report.artifacts.append(ckpt)
        plot_sets = []
        for c, ref_points in zip(eval_conds, ref_sets_for_plot):
            label = kind if c is None else f"{kind}@c={c}"
            task_cond = None if c is None else np.full((cfg.eval_n, 1), c)
            gen_sets = [
                _sample_stripped(model, strategy, cfg.eval_n, task_cond, 2, eval_rng)
                for _ in range(cfg.eval_sets)
            ]
            plot_sets.append(gen_sets[0])
            all_rows.extend(
                _metric_rows(
                    label, strategy.label(), ref_points, gen_sets,
                    cfg.eval_emd_n, eval_rng, cfg.seed,
                )
            )
        svg_rows.append((name, plot_sets))

    metrics.append_result_rows(results_path, all_rows)
    report.rows = all_rows
    svg_path = os.path.join(out, "samples.svg")
    plots.scatter_grid_svg(svg_path, svg_rows)
    report.artifacts.extend([results_path, svg_path])
    return report


def run_ik(cfg):
    report = RunReport(config=vars(cfg).copy(), config_hash=config_hash(cfg))
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    arm = robot.PlanarArm()
    names = [s.strip() for s in cfg.compare.split(",") if s.strip()]
    strategies = [_strategy_from_name(name, cfg) for name in names]

    def batch_fn(rng):
        theta, poses = robot.gen_ik_dataset(arm, cfg.train_batch, rng)
        return theta, robot.pose_condition(poses)

    def train_one(item):
        name, strategy = item
        loss_path = os.path.join(out, f"loss_{name}.csv")
        model = train_strategy(
            cfg, strategy, arm.n_joints, 4, batch_fn, cfg.seed, loss_path
        )
        return name, strategy, model, loss_path

    trained = _thread_map(train_one, list(zip(names, strategies)))

    # Held-out targets shared across strategies.
    target_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    _, target_poses = robot.gen_ik_dataset(arm, cfg.ik_targets, target_rng)
    results_path = os.path.join(out, "results.csv")
    if os.path.exists(results_path):
        os.remove(results_path)
    all_rows = []
    for name, strategy, model, loss_path in trained:
        report.artifacts.append(loss_path)
        ckpt = os.path.join(out, f"model_{name}.json")
        model.save(ckpt)
        report.artifacts.append(ckpt)
        eval_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
        pos_errs, ang_errs = [], []
        first_solutions = None
        for t, pose in enumerate(target_poses):
            cond = np.tile(robot.pose_condition(pose), (cfg.ik_solutions, 1))
            sols = _sample_stripped(
                model, strategy, cfg.ik_solutions, cond, arm.n_joints, eval_rng
            )
            sols = robot.wrap_angle(sols)
            if t == 0:
                first_solutions = sols
            pe, ae = robot.ik_errors(arm, sols, pose)
            pos_errs.append(pe)
            ang_errs.append(ae)
        for metric_name, value in (
            ("position_error", float(np.mean(pos_errs))),
            ("angular_error_deg", float(np.mean(ang_errs))),
        ):
            all_rows.append(
                {
                    "dataset": "planar_arm",
                    "model": strategy.label(),
                    "metric": metric_name,
                    "measure": "l2",
                    "value": repr(value),
                    "seed": cfg.seed,
                }
            )
        svg_path = os.path.join(out, f"solutions_{name}.svg")
        plots.arm_overlay_svg(svg_path, arm, first_solutions, target_poses[0][:2])
        report.artifacts.append(svg_path)
    metrics.append_result_rows(results_path, all_rows)
    report.rows = all_rows
    report.artifacts.append(results_path)
    return report


def run_bias_check(cfg):
    report = RunReport(config=vars(cfg).copy(), config_hash=config_hash(cfg))
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    sampler = lambda n, r: r.standard_normal(n)
    hw = cfg.bias_half_width
    mean_asym, se_asym = dequant_bias_estimate(sampler, 0.0, 1.0, cfg.bias_n, rng)
    mean_sym, se_sym = dequant_bias_estimate(sampler, -hw, hw, cfg.bias_n, rng)
    rows = []
    for model_label, metric_name, value in (
        ("uniform(0,1)", "mean", mean_asym),
        ("uniform(0,1)", "se", se_asym),
        (f"uniform(-{hw},{hw})", "mean", mean_sym),
        (f"uniform(-{hw},{hw})", "se", se_sym),
        ("uniform(0,1)", "reported_constant", uniform_bias_paper_constant()),
    ):
        rows.append(
            {
                "dataset": "standard_normal",
                "model": model_label,
                "metric": metric_name,
                "measure": "mean",
                "value": repr(float(value)),
                "seed": cfg.seed,
            }
        )
    results_path = os.path.join(out, "results.csv")
    if os.path.exists(results_path):
        os.remove(results_path)
    metrics.append_result_rows(results_path, rows)
    report.rows = rows
    report.artifacts.append(results_path)
    return report


def run_vae(cfg):
    report = RunReport(config=vars(cfg).copy(), config_hash=config_hash(cfg))
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    images, _ = vae.toy_images(cfg.vae_images, seed=cfg.seed)
    noise = PaddingNoiseConfig(cfg.dequant_p, cfg.dequant_a, cfg.dequant_b)
    model = vae.build_vae(latent_dim=cfg.vae_latent, noise=noise, seed=cfg.seed)
    losses = vae.train_vae(
        model, images, cfg.vae_steps, batch_size=cfg.vae_batch,
        lr=cfg.train_lr, seed=cfg.seed,
    )
    loss_path = os.path.join(out, "loss.csv")
    with open(loss_path, "w") as fh:
        fh.write("step,loss\n")
        for step, value in enumerate(losses):
            fh.write(f"{step},{value!r}\n")
    from .autodiff import no_grad

    with no_grad():
        lp = vae.encode(model, images[:8])
        recon = vae.decode(model, lp.mu).data
    grid = np.concatenate([images[:8], recon], axis=0)
    svg_path = os.path.join(out, "reconstructions.svg")
    plots.image_grid_svg(svg_path, grid, vae.IMAGE_SIDE)
    rows = [
        {
            "dataset": "toy_images",
            "model": f"paddingflow_vae({noise.p},{noise.a},{noise.b})",
            "metric": "final_neg_elbo",
            "measure": "l2",
            "value": repr(float(np.mean(losses[-50:]))) if losses else "nan",
            "seed": cfg.seed,
        }
    ]
    results_path = os.path.join(out, "results.csv")
    if os.path.exists(results_path):
        os.remove(results_path)
    metrics.append_result_rows(results_path, rows)
    report.rows = rows
    report.artifacts.extend([loss_path, svg_path, results_path])
    return report


def _parse_grid(text):
    grid = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            p_str, a_str = item.split(":")
            grid.append((int(p_str), float(a_str)))
        except ValueError as exc:
            raise ConfigError(f"bad tabular.grid entry {item!r} (want p:a)") from exc
    if not grid:
        raise ConfigError("tabular.grid is empty")
    return grid


def run_tabular(cfg):
    report = RunReport(config=vars(cfg).copy(), config_hash=config_hash(cfg))
    out = cfg.out
    os.makedirs(out, exist_ok=True)
    data = datasets.load_csv_standardized(cfg.dataset_path, seed=cfg.seed)
    d = data.train.shape[1]
    name = os.path.basename(cfg.dataset_path)
    configs = [("none", DequantStrategy("none"))]
    for p, a in _parse_grid(cfg.tabular_grid):
        configs.append(
            (
                f"paddingflow({p},{a})",
                DequantStrategy(
                    "paddingflow", cfg=PaddingNoiseConfig(p, a, cfg.dequant_b)
                ),
            )
        )

    train_rows = data.train

    def batch_fn(rng):
        idx = rng.integers(0, len(train_rows), size=min(cfg.train_batch, len(train_rows)))
        return train_rows[idx], None

    results_path = os.path.join(out, "results.csv")
    if os.path.exists(results_path):
        os.remove(results_path)
    all_rows = []
    test = data.test if len(data.test) else data.train
    eval_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 4]))
    ref_points = metrics.subsample(test, cfg.eval_n, eval_rng)
    for label, strategy in configs:
        model = train_strategy(cfg, strategy, d, 0, batch_fn, cfg.seed)
        gen_sets = [
            _sample_stripped(model, strategy, len(ref_points), None, d, eval_rng)
            for _ in range(cfg.eval_sets)
        ]
        all_rows.extend(
            _metric_rows(
                name, label, ref_points, gen_sets, cfg.eval_emd_n, eval_rng, cfg.seed
            )
        )
    metrics.append_result_rows(results_path, all_rows)
    report.rows = all_rows
    report.artifacts.append(results_path)
    return report


_RUNNERS = {
    "toy2d": run_toy2d,
    "ik": run_ik,
    "bias-check": run_bias_check,
    "vae": run_vae,
    "tabular": run_tabular,
}


def run(cfg):
    start = time.monotonic()
    report = _RUNNERS[cfg.task](cfg)
    report.wall_clock = time.monotonic() - start
    report_path = os.path.join(cfg.out, "report.json")
    report.save(report_path)
    return report


def _build_arg_parser():
    parser = argparse.ArgumentParser(
        prog="padflow",
        description="Normalizing-flow dequantization experiments",
    )
    parser.add_argument("--config", metavar="PATH", help="config file")
    parser.add_argument("--task", choices=TASKS)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", metavar="DIR")
    parser.add_argument("--dequant.kind", dest="dequant_kind",
                        choices=("none", "uniform", "softflow", "paddingflow"))
    parser.add_argument("--dequant.p", dest="dequant_p", type=int)
    parser.add_argument("--dequant.a", dest="dequant_a", type=float)
    parser.add_argument("--dequant.b", dest="dequant_b", type=float)
    parser.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override any dotted config key",
    )
    return parser


def main(argv=None):
    args = _build_arg_parser().parse_args(argv)
    try:
        file_pairs = {}
        if args.config:
            try:
                with open(args.config) as fh:
                    text = fh.read()
            except OSError as exc:
                raise ConfigError(f"cannot read config file: {exc}") from exc
            file_pairs = parse_config_text(text)
        flag_pairs = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            flag_pairs[key.strip()] = value.strip()
        for key in ("task", "seed", "out", "dequant_kind", "dequant_p",
                    "dequant_a", "dequant_b"):
            value = getattr(args, key)
            if value is not None:
                flag_pairs[key.replace("_", ".", 1) if "_" in key else key] = str(value)
        cfg = build_config(file_pairs, flag_pairs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        report = run(cfg)
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4
    print(f"done: {len(report.rows)} result rows in {cfg.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
