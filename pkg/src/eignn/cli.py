"""Experiment command line: dataset generation, training, verification,
solver benchmarking, and feature-perturbation attacks.

Every command is deterministic per --seed, writes machine-readable CSV (plus
a rendered PNG figure for the report commands), and prints a human summary.
Exit codes: 0 success, 1 validation failure, 2 runtime error.
"""

import argparse
import csv
import os
import statistics
import sys
import time

import numpy as np

from . import attack as attack_mod
from . import graphs, linalg, oracle, plotting, trainer
from . import model as model_mod
from .errors import EignnError, InfeasibleSplitError, VerificationFailedError
from .graphs import ChainsSpec, generate_chains, load_graph_dir, save_graph
from .model import EignnModel, load_model, loss_and_output_grad, save_model
from .trainer import TrainConfig, build_or_load_cache, edge_set_hash

FORWARD_TOL = 1e-9
GRAD_TOL = 1e-5
PGD_PRESETS = ((0.01, 0.001), (0.001, 0.0001), (0.0001, 1e-5))


def _parse_floats(text):
    return [float(v) for v in text.split(",") if v]


def _parse_ints(text):
    return [int(v) for v in text.split(",") if v]


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _train_config(args, cache_path=None):
    return TrainConfig(
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        weight_decay=args.weight_decay,
        gamma=args.gamma,
        eps_f=args.eps_f,
        seed=args.seed,
        patience=args.patience,
        cache_path=cache_path,
        optimizer=args.optimizer,
    )


# ------------------------------------------------------------------ commands


def cmd_generate_chains(args):
    spec = ChainsSpec(
        classes=args.classes,
        chains_per_class=args.chains,
        length=args.length,
        feature_dim=args.dim,
        seed=args.seed,
    )
    graph = generate_chains(spec)
    paths = save_graph(graph, args.out)
    print(
        f"wrote {graph.n} nodes ({args.classes} classes x {args.chains} chains "
        f"x length {args.length}) to {args.out}"
    )
    for name, path in paths.items():
        print(f"  {name}: {path}")
    return 0


def cmd_train(args):
    graph = load_graph_dir(
        args.data,
        split_spec=args.split,
        split_seed=args.split_seed,
        num_classes=args.classes,
    )
    if args.cache and os.path.exists(args.cache):
        try:
            cached = trainer.load_cache(args.cache)
            if cached.content_hash == edge_set_hash(graph.edges):
                print(f"cache hit: {args.cache} (skipping eigendecomposition)")
            else:
                print(f"cache stale: {args.cache} (hash mismatch, recomputing)")
        except EignnError as exc:
            print(f"cache unreadable ({exc}), recomputing")
    config = _train_config(args, cache_path=args.cache)
    model, report = trainer.train(graph, config)

    os.makedirs(args.out, exist_ok=True)
    model_path = os.path.join(args.out, "model.eigm")
    report_path = os.path.join(args.out, "train_report.csv")
    save_model(model, model_path)
    report.write_csv(report_path)
    if args.plot:
        plotting.save_train_curves(report, os.path.join(args.out, "train_curves.png"))
    print(
        f"trained {report.epochs_run} epochs "
        f"(preprocessing {report.preprocessing_time:.2f}s, "
        f"median epoch {statistics.median(report.epoch_ms):.2f}ms)"
    )
    print(f"model: {model_path}\nreport: {report_path}")
    print(
        f"best val acc {report.best_val_acc:.4f} @ epoch {report.best_epoch}; "
        f"test acc {report.test_acc_at_best_val:.4f}"
    )
    return 0


def cmd_sweep_lengths(args):
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for length in args.lengths:
        cache_path = os.path.join(args.out, f"S_c{args.classes}_nc{args.chains}_l{length}.eigs")
        accs = []
        for seed in args.seeds:
            spec = ChainsSpec(
                classes=args.classes,
                chains_per_class=args.chains,
                length=length,
                feature_dim=args.dim,
                seed=seed,
            )
            graph = generate_chains(spec)
            cfg_args = argparse.Namespace(**vars(args))
            cfg_args.seed = seed
            _, report = trainer.train(graph, _train_config(cfg_args, cache_path=cache_path))
            accs.append(report.test_acc_at_best_val)
            print(f"length {length} seed {seed}: test acc {accs[-1]:.4f}")
        mean = statistics.fmean(accs)
        std = statistics.pstdev(accs)
        rows.append((length, f"{mean:.6f}", f"{std:.6f}", len(args.seeds)))
        print(f"length {length}: mean {mean:.4f} +- {std:.4f} over {len(args.seeds)} seeds")
    csv_path = os.path.join(args.out, "sweep.csv")
    _write_csv(csv_path, ["length", "mean_acc", "std_acc", "seeds"], rows)
    plotting.save_sweep_figure(
        [(r[0], float(r[1]), float(r[2])) for r in rows],
        os.path.join(args.out, "sweep.png"),
        title=f"Chains c={args.classes}: test accuracy vs length",
    )
    print(f"wrote {csv_path}")
    return 0


def _verify_forward(args):
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.instances):
        model, X, S, _, _ = oracle.random_instance(rng)
        cache = oracle.cache_from_dense(S)
        z_spec = model_mod.spectral_forward(model, X, cache).Z
        z_kron = oracle.kron_forward(model, X, S)
        z_iter, report = oracle.iterate_fixed_point(model, X, S, tol=1e-12, max_iters=100000)
        if not report.converged:
            raise VerificationFailedError("fixed-point convergence", "solver hit max_iters")
        gap = max(
            float(np.max(np.abs(z_spec - z_kron))),
            float(np.max(np.abs(z_spec - z_iter))),
            float(np.max(np.abs(z_kron - z_iter))),
        )
        worst = max(worst, gap)
    print(f"forward three-way agreement: worst max-abs gap {worst:.3e} (tol {FORWARD_TOL:.0e})")
    if worst > FORWARD_TOL:
        raise VerificationFailedError("forward equivalence", f"gap {worst:.3e} > {FORWARD_TOL}")


def _verify_gradients(args):
    rng = np.random.default_rng(args.seed + 1)
    worst = {"grad_F vs kron": 0.0, "grad_F vs fd": 0.0, "grad_B vs fd": 0.0, "input vs fd": 0.0}
    for _ in range(args.instances):
        model, X, S, labels, mask = oracle.random_instance(rng)
        cache = oracle.cache_from_dense(S)
        trace = model_mod.spectral_forward(model, X, cache)
        _, D = loss_and_output_grad(trace.logits, labels, mask)
        grad_F, grad_B = model_mod.backward(model, X, cache, trace, D)
        grad_X = model_mod.input_grad(model, cache, trace, D)

        kron_gf = oracle.kron_grad_F(model, X, S, D)
        worst["grad_F vs kron"] = max(
            worst["grad_F vs kron"], oracle.relative_error(grad_F, kron_gf)
        )

        def loss_of(F=None, B=None, Xp=None):
            probe = EignnModel(
                model.F if F is None else F,
                model.B if B is None else B,
                model.gamma,
                model.eps_f,
            )
            t = model_mod.spectral_forward(probe, X if Xp is None else Xp, cache)
            return loss_and_output_grad(t.logits, labels, mask)[0]

        fd_F = oracle.finite_difference_grad(lambda F: loss_of(F=F), model.F)
        fd_B = oracle.finite_difference_grad(lambda B: loss_of(B=B), model.B)
        fd_X = oracle.finite_difference_grad(lambda Xp: loss_of(Xp=Xp), X)
        worst["grad_F vs fd"] = max(worst["grad_F vs fd"], oracle.relative_error(grad_F, fd_F))
        worst["grad_B vs fd"] = max(worst["grad_B vs fd"], oracle.relative_error(grad_B, fd_B))
        worst["input vs fd"] = max(worst["input vs fd"], oracle.relative_error(grad_X, fd_X))
    for name, err in worst.items():
        print(f"gradient check {name}: worst relative error {err:.3e} (tol {GRAD_TOL:.0e})")
        if err > GRAD_TOL:
            raise VerificationFailedError(name, f"relative error {err:.3e} > {GRAD_TOL}")


def cmd_verify(args):
    _verify_forward(args)
    if args.grad_check:
        _verify_gradients(args)
    print("verify: all checks passed")
    return 0


def _timed_epoch_closed(F, B, gamma, eps_f, XQ, lam_s, Q_s, labels, mask):
    eig_f, g_norm, G, W, logits_q = trainer._epoch_pass(F, B, gamma, eps_f, XQ, lam_s)
    logits = logits_q @ Q_s.T
    _, D = loss_and_output_grad(logits, labels, mask)
    trace = model_mod.ForwardTrace(
        eig_f=eig_f, g_norm=g_norm, G=G, W=W, Z=np.empty((F.shape[0], 0)), logits=logits
    )
    return model_mod.grads_from_coeffs(F, B, gamma, eps_f, trace, D @ Q_s, lam_s)


def _timed_epoch_iterative(model, X, S, labels, mask, tol=None, depth=None):
    """One epoch through the iterative or finite-depth route: forward solve,
    loss gradient, adjoint solve (same recurrence driven by B^T D), assembly."""
    if tol is not None:
        Z, report = oracle.iterate_fixed_point(model, X, S, tol=tol, max_iters=100000)
        its = report.iterations
    else:
        Z = oracle.finite_depth_forward(model, X, S, depth)
        its = depth
    _, D = loss_and_output_grad(model.B @ Z, labels, mask)
    rhs = model.B.T @ D
    if tol is not None:
        M, _ = oracle.iterate_fixed_point(model, rhs, S, tol=tol, max_iters=100000)
    else:
        M = oracle.finite_depth_forward(model, rhs, S, depth)
    R = M @ S @ Z.T
    grad_F = model_mod.grad_f_from_r(model.F, model.gamma, model.eps_f, R)
    grad_B = D @ Z.T
    return grad_F, grad_B, its


def cmd_bench(args):
    os.makedirs(args.out, exist_ok=True)
    rows = []
    fig_rows = []
    for length, n_c in args.configs:
        spec = ChainsSpec(
            classes=args.classes,
            chains_per_class=n_c,
            length=length,
            feature_dim=args.dim,
            seed=args.seed,
        )
        graph = generate_chains(spec)
        t0 = time.perf_counter()
        cache = trainer.compute_cache(graph)
        preprocess_s = time.perf_counter() - t0
        S = graphs.normalized_adjacency(graph)
        F, B = trainer.init_params(graph.feature_dim, graph.num_classes, args.seed)
        model = EignnModel(F, B, args.gamma, args.eps_f)
        XQ = graph.X @ cache.eigenvectors
        labels, mask = graph.labels, graph.train_mask

        _timed_epoch_closed(F, B, args.gamma, args.eps_f, XQ, cache.eigenvalues,
                            cache.eigenvectors, labels, mask)  # warmup
        closed = []
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            _timed_epoch_closed(F, B, args.gamma, args.eps_f, XQ, cache.eigenvalues,
                                cache.eigenvectors, labels, mask)
            closed.append((time.perf_counter() - t0) * 1e3)
        closed_ms = statistics.median(closed)

        t0 = time.perf_counter()
        _, _, fp_iters = _timed_epoch_iterative(model, graph.X, S, labels, mask, tol=args.tol)
        fixed_ms = (time.perf_counter() - t0) * 1e3

        t0 = time.perf_counter()
        _timed_epoch_iterative(model, graph.X, S, labels, mask, depth=length)
        finite_ms = (time.perf_counter() - t0) * 1e3

        rows.append(
            (length, n_c, graph.n, f"{preprocess_s:.4f}", f"{closed_ms:.4f}",
             f"{fixed_ms:.4f}", fp_iters, f"{finite_ms:.4f}")
        )
        fig_rows.append((f"l={length},nc={n_c}", closed_ms, fixed_ms, finite_ms))
        print(
            f"(l={length}, n_c={n_c}, n={graph.n}): preprocess {preprocess_s:.2f}s, "
            f"closed {closed_ms:.2f}ms, fixed-point {fixed_ms:.2f}ms "
            f"({fp_iters} iters), finite-depth H={length} {finite_ms:.2f}ms"
        )
    csv_path = os.path.join(args.out, "bench.csv")
    _write_csv(
        csv_path,
        ["length", "chains_per_class", "n", "preprocess_s", "closed_ms",
         "fixed_point_ms", "fp_iterations", "finite_depth_ms"],
        rows,
    )
    plotting.save_bench_figure(fig_rows, os.path.join(args.out, "bench.png"))
    print(f"wrote {csv_path}")
    return 0


def cmd_attack(args):
    graph = load_graph_dir(args.data, num_classes=args.classes)
    model = load_model(args.model)
    cache = build_or_load_cache(graph, args.cache)
    target = attack_mod.correctly_classified(model, graph, cache, graph.test_mask)
    if not np.any(target):
        raise VerificationFailedError("attack targets", "no correctly classified test node")

    def measure(X):
        trace = model_mod.spectral_forward(model, X, cache)
        pred = np.argmax(trace.logits, axis=0)
        acc = float(np.mean(pred[graph.test_mask] == graph.labels[graph.test_mask]))
        loss, _ = loss_and_output_grad(trace.logits, graph.labels, target)
        return acc, loss

    rows = []
    clean_acc, clean_loss = measure(graph.X)
    rows.append(("clean", 0.0, "", "", f"{clean_acc:.6f}", f"{clean_loss:.6g}"))
    for alpha in args.uniform_alphas:
        acc, loss = measure(attack_mod.uniform_noise(graph.X, alpha, args.seed))
        rows.append(("uniform", alpha, "", "", f"{acc:.6f}", f"{loss:.6g}"))
    for eps in args.fgsm_eps:
        acc, loss = measure(attack_mod.fgsm(model, graph, cache, eps, target_mask=target))
        rows.append(("fgsm", eps, "", "", f"{acc:.6f}", f"{loss:.6g}"))
    for eps, step in args.pgd_grid:
        Xp = attack_mod.pgd(model, graph, cache, eps, step, args.pgd_iterations, target_mask=target)
        acc, loss = measure(Xp)
        rows.append(("pgd", eps, step, args.pgd_iterations, f"{acc:.6f}", f"{loss:.6g}"))

    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "attack.csv")
    _write_csv(
        csv_path,
        ["attack", "epsilon", "step_size", "iterations", "accuracy", "attack_loss"],
        rows,
    )
    plotting.save_attack_figure(
        [(r[0], float(r[1]), float(r[4])) for r in rows],
        os.path.join(args.out, "attack.png"),
    )
    for r in rows:
        print(f"{r[0]:8s} eps={r[1]!s:8s} accuracy={r[4]} loss={r[5]}")
    print(f"wrote {csv_path}")
    return 0


# ------------------------------------------------------------------ plumbing


def _apply_config_file(args, argv):
    """Fill flags from a flat key=value file; explicit flags win."""
    if not getattr(args, "config", None):
        return
    explicit = {tok.split("=", 1)[0] for tok in argv if tok.startswith("--")}
    with open(args.config, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{args.config}:{line_no}: expected key=value, got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            attr = key.replace("-", "_")
            if not hasattr(args, attr):
                raise ValueError(f"{args.config}:{line_no}: unknown option {key!r}")
            if f"--{key.replace('_', '-')}" in explicit:
                continue
            current = getattr(args, attr)
            if isinstance(current, bool):
                setattr(args, attr, value.lower() in ("1", "true", "yes"))
            elif isinstance(current, int):
                setattr(args, attr, int(value))
            elif isinstance(current, float):
                setattr(args, attr, float(value))
            elif isinstance(current, list):
                setattr(args, attr, _parse_floats(value) if current and isinstance(current[0], float) else _parse_ints(value))
            else:
                setattr(args, attr, value)


def _add_train_flags(p):
    p.add_argument("--epochs", type=int, default=3000)
    p.add_argument("--learning-rate", type=float, default=5.0)
    p.add_argument("--weight-decay", type=float, default=5e-6)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--eps-f", type=float, default=1e-6)
    p.add_argument("--patience", type=int, default=500)
    p.add_argument("--optimizer", choices=("gd", "adam"), default="gd")


def build_parser():
    parser = argparse.ArgumentParser(prog="eignn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", default=None, help="flat key=value defaults file")

    p = sub.add_parser("generate-chains", parents=[common], help="write a chains dataset")
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--chains", type=int, default=20)
    p.add_argument("--length", type=int, default=10)
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate_chains)

    p = sub.add_parser("train", parents=[common], help="train on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=None, help="'ratio:a,b,c' override; default splits.txt")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--cache", default=None, help="eigendecomposition cache file")
    p.add_argument("--out", default="runs/train")
    p.add_argument("--plot", action="store_true", help="render training curves PNG")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep-lengths", parents=[common], help="accuracy vs chain length")
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--chains", type=int, default=20)
    p.add_argument("--lengths", type=_parse_ints, default=[10, 50, 100])
    p.add_argument("--seeds", type=_parse_ints, default=[0, 1, 2, 3, 4])
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--out", default="runs/sweep")
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep_lengths)

    p = sub.add_parser("verify", parents=[common], help="oracle equivalence checks")
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--grad-check", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", parents=[common], help="solver timing comparison")
    p.add_argument(
        "--configs",
        type=lambda s: [tuple(int(x) for x in c.split(":")) for c in s.split(",")],
        default=[(100, 20), (200, 20)],
        help="comma list of length:chains_per_class pairs",
    )
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--eps-f", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", default="runs/bench")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("attack", parents=[common], help="robustness of a trained model")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--cache", default=None)
    p.add_argument("--uniform-alphas", type=_parse_floats, default=[0.01, 0.1])
    p.add_argument("--fgsm-eps", type=_parse_floats, default=[0.0001, 0.001, 0.01])
    p.add_argument(
        "--pgd-grid",
        type=lambda s: [tuple(float(x) for x in c.split(":")) for c in s.split(",")],
        default=list(PGD_PRESETS),
        help="comma list of epsilon:step_size pairs",
    )
    p.add_argument("--pgd-iterations", type=int, default=15)
    p.add_argument("--out", default="runs/attack")
    p.set_defaults(func=cmd_attack)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        _apply_config_file(args, argv)
        return args.func(args)
    except (ValueError, InfeasibleSplitError, VerificationFailedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (EignnError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def entrypoint():
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
