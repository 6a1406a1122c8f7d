"""Command-line entry point.

Subcommands: gen-data, train, eval, predict, stability, params, sweep-T.
Exit codes: 0 success, 2 config/usage error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import fields

import numpy as np

from . import data as datamod
from . import training
from .cells import (ACTIVATIONS, load_checkpoint, preactivation, readout,
                    save_checkpoint)
from .errors import ConfigError, ContractViolation, NumericOverflow, ParseError
from .graph import build_laplacians, load_graph, save_graph
from .stability import scalar_cell_params, stability_sweep, sweep_csv
from .training import (TrainConfig, count_params, history_csv, parse_config,
                       prediction_loss, train)


def _parse_overrides(pairs):
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        key, _, val = pair.partition("=")
        out[key.strip()] = val.strip()
    return out


def _load_train_config(path, overrides) -> TrainConfig:
    text = open(path).read() if path else ""
    try:
        return parse_config(text, overrides)
    except (ParseError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


# --- gen-data ----------------------------------------------------------------

_SYNTH_KEYS = {f.name for f in fields(datamod.SyntheticConfig)}


def _synth_config(path, overrides) -> datamod.SyntheticConfig:
    values = {}
    if path:
        for lineno, line in enumerate(open(path).read().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    values.update(overrides)
    cfg = datamod.SyntheticConfig()
    for key, val in values.items():
        if key not in _SYNTH_KEYS:
            raise ConfigError(
                f"unknown data config key {key!r}; valid: {sorted(_SYNTH_KEYS)}")
        current = getattr(cfg, key)
        try:
            setattr(cfg, key, type(current)(val) if not isinstance(current, str) else val)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    try:
        cfg.__post_init__()
    except ContractViolation as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def cmd_gen_data(args):
    cfg = _synth_config(args.config, _parse_overrides(args.overrides))
    seq, graph = datamod.generate_synthetic(cfg)
    datamod.save_frames(seq, args.out_frames)
    save_graph(graph, args.out_graph)
    print(f"wrote {args.out_frames} ({seq.n_frames} frames, {seq.n_nodes} nodes) "
          f"and {args.out_graph} ({len(graph.edges)} edges)")
    return 0


# --- train -------------------------------------------------------------------

def _load_inputs(frames_path, graph_path):
    seq = datamod.load_frames(frames_path)
    graph = load_graph(graph_path)
    if graph.n_nodes != seq.n_nodes:
        raise ConfigError(
            f"graph has {graph.n_nodes} nodes but frames have {seq.n_nodes}")
    return seq, graph


def cmd_train(args):
    cfg = _load_train_config(args.config, _parse_overrides(args.overrides))
    seq, graph = _load_inputs(args.frames, args.graph)
    initial = resume_state = None
    epoch_offset = 0
    if args.resume:
        initial, checksum, resume_state = load_checkpoint(args.resume)
        if checksum != graph.checksum():
            raise ConfigError("checkpoint was trained on a different graph")
        if resume_state is None:
            raise ConfigError("checkpoint carries no training state to resume")
        epoch_offset = resume_state["epoch"]
    run = train(cfg, seq, graph, initial=initial, resume_state=resume_state)
    state = {"epoch": run.epochs_done,
             "adam_step": run.adam.step,
             "lr": run.lr_history[-1] if run.lr_history else cfg.lr,
             "adam_m": run.adam.first_moment,
             "adam_v": run.adam.second_moment}
    save_checkpoint(run.final_params, args.out_checkpoint, graph.checksum(),
                    train_state=state)
    csv = history_csv(run, epoch_offset=epoch_offset)
    with open(args.out_history, "a" if args.append_history else "w") as fh:
        if args.append_history:
            csv = "\n".join(csv.splitlines()[1:])
            if csv:
                csv += "\n"
        fh.write(csv)
    for i, (tr, te) in enumerate(run.epoch_losses):
        print(f"epoch {epoch_offset + i + 1}: train {tr:.6g} test {te:.6g} "
              f"alpha {run.alpha_history[i]:.4f} beta {run.beta_history[i]:.4f}")
    if run.aborted:
        print("training aborted: numeric overflow", file=sys.stderr)
        return 3
    return 0


# --- eval / predict ------------------------------------------------------------

def _load_model(checkpoint_path, graph):
    p, checksum, _ = load_checkpoint(checkpoint_path)
    if checksum != graph.checksum():
        raise ConfigError("checkpoint graph checksum does not match graph file")
    return p


def cmd_eval(args):
    seq, graph = _load_inputs(args.frames, args.graph)
    p = _load_model(args.checkpoint, graph)
    lap = build_laplacians(graph)
    losses, _ = training.teacher_forced_losses(p, lap, seq.frames)
    lines = ["t,loss"] + [f"{t + 1},{v:.17g}" for t, v in enumerate(losses)]
    out = "\n".join(lines) + "\n"
    if args.out:
        open(args.out, "w").write(out)
    else:
        sys.stdout.write(out)
    print(f"mean transition loss: {float(np.mean(losses)):.17g}")
    return 0


def cmd_predict(args):
    seq, graph = _load_inputs(args.frames, args.graph)
    p = _load_model(args.checkpoint, graph)
    lap = build_laplacians(graph)
    act = ACTIVATIONS[p.activation][0]
    n = seq.n_nodes
    h = np.zeros((n, training._hidden_width(p, seq.n_features)))
    preds = []
    if args.horizon == 1:
        # teacher forced: one prediction per input frame except the last
        for t in range(seq.n_frames - 1):
            h = p.alpha * act(preactivation(p, lap, h, seq.frames[t])) + p.beta * h
            preds.append(readout(p, lap, h))
    elif args.horizon > 1:
        # consume every input frame, then free-run
        x = None
        for t in range(seq.n_frames):
            h = p.alpha * act(preactivation(p, lap, h, seq.frames[t])) + p.beta * h
        x = readout(p, lap, h)
        preds.append(x)
        for _ in range(args.horizon - 1):
            h = p.alpha * act(preactivation(p, lap, h, x)) + p.beta * h
            x = readout(p, lap, h)
            preds.append(x)
    frames = (np.stack(preds) if preds
              else np.zeros((0, n, seq.n_features)))
    out_seq = datamod.FrameSequence(frames)
    datamod.save_frames(out_seq, args.out)
    print(f"wrote {len(preds)} predicted frames to {args.out}")
    return 0


# --- stability ------------------------------------------------------------------

def _parse_grid(text, cast=float):
    try:
        vals = [cast(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad grid {text!r}: {exc}") from None
    if not vals:
        raise ConfigError(f"empty grid {text!r}")
    return vals


def cmd_stability(args):
    if args.frames and args.graph:
        _, graph = _load_inputs(args.frames, args.graph)
    elif args.graph:
        graph = load_graph(args.graph)
    else:
        cfg = datamod.SyntheticConfig(n_nodes=args.n_nodes, n_frames=4, seed=args.seed)
        _, graph = datamod.generate_synthetic(cfg)
    base = scalar_cell_params(u=args.u, n_nodes=graph.n_nodes, w=args.w,
                              b=args.bias, activation=args.activation,
                              use_plain_laplacian=args.plain_laplacian)
    rows = stability_sweep(graph, base, _parse_grid(args.alpha),
                           _parse_grid(args.beta), _parse_grid(args.T, int),
                           seed=args.seed)
    csv = sweep_csv(rows)
    if args.out:
        open(args.out, "w").write(csv)
        print(f"wrote {len(rows)} rows to {args.out}")
    else:
        sys.stdout.write(csv)
    return 0


# --- params / sweep-T -------------------------------------------------------------

def cmd_params(args):
    try:
        count = count_params(args.family, args.n, k=args.k, p=args.p)
    except ContractViolation as exc:
        raise ConfigError(str(exc)) from None
    print(count)
    return 0


def cmd_sweep_t(args):
    t_list = _parse_grid(args.T, int)
    if len(set(t_list)) != len(t_list):
        raise ConfigError("duplicate T values in sweep list")
    overrides = _parse_overrides(args.overrides)
    seq, graph = _load_inputs(args.frames, args.graph)
    lines = ["T,seed,final_alpha,final_beta,test_loss"]
    for t_w in t_list:
        for s in range(args.seeds):
            cfg = _load_train_config(args.config, overrides)
            cfg.t_w = t_w
            cfg.seed = cfg.seed + s
            try:
                run = train(cfg, seq, graph)
                if run.aborted or not run.epoch_losses:
                    lines.append(f"{t_w},{cfg.seed},nan,nan,nan")
                    continue
                lines.append(f"{t_w},{cfg.seed},{run.final_params.alpha:.17g},"
                             f"{run.final_params.beta:.17g},"
                             f"{run.epoch_losses[-1][1]:.17g}")
            except NumericOverflow:
                lines.append(f"{t_w},{cfg.seed},nan,nan,nan")
    csv = "\n".join(lines) + "\n"
    if args.out:
        open(args.out, "w").write(csv)
        print(f"wrote {len(lines) - 1} rows to {args.out}")
    else:
        sys.stdout.write(csv)
    return 0


# --- argument parsing ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="fgrnn",
                                  description="Graph-sequence prediction toolkit")
    sub = top.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic point-cloud sequence")
    g.add_argument("--config")
    g.add_argument("--out-frames", required=True)
    g.add_argument("--out-graph", required=True)
    g.add_argument("overrides", nargs="*", metavar="key=value")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config")
    t.add_argument("--frames", required=True)
    t.add_argument("--graph", required=True)
    t.add_argument("--out-checkpoint", required=True)
    t.add_argument("--out-history", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--append-history", action="store_true")
    t.add_argument("overrides", nargs="*", metavar="key=value")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="per-transition loss of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--frames", required=True)
    e.add_argument("--graph", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="one-step or rolled-out predictions")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--frames", required=True)
    pr.add_argument("--graph", required=True)
    pr.add_argument("--horizon", type=int, default=1)
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    st = sub.add_parser("stability", help="Jacobian-product stability sweep")
    st.add_argument("--frames")
    st.add_argument("--graph")
    st.add_argument("--n-nodes", type=int, default=32)
    st.add_argument("--alpha", default="0,0.5,1")
    st.add_argument("--beta", default="0,0.5,1")
    st.add_argument("--T", default="4,8,12")
    st.add_argument("--u", type=float, default=1.0)
    st.add_argument("--w", type=float, default=0.0)
    st.add_argument("--bias", type=float, default=0.0)
    st.add_argument("--activation", default="relu",
                    choices=sorted(ACTIVATIONS))
    st.add_argument("--plain-laplacian", action="store_true")
    st.add_argument("--seed", type=int, default=0)
    st.add_argument("--out")
    st.set_defaults(func=cmd_stability)

    pa = sub.add_parser("params", help="trainable-parameter count")
    pa.add_argument("family", choices=["chebyshev", "first_order", "dense",
                                       "lstm_dense", "lstm_gcn"])
    pa.add_argument("--n", type=int, required=True)
    pa.add_argument("--k", type=int, default=0)
    pa.add_argument("--p", type=int, default=0)
    pa.set_defaults(func=cmd_params)

    sw = sub.add_parser("sweep-T", help="train one model per window length")
    sw.add_argument("--config")
    sw.add_argument("--frames", required=True)
    sw.add_argument("--graph", required=True)
    sw.add_argument("--T", required=True, help="comma-separated window lengths")
    sw.add_argument("--seeds", type=int, default=1)
    sw.add_argument("--out")
    sw.add_argument("overrides", nargs="*", metavar="key=value")
    sw.set_defaults(func=cmd_sweep_t)
    return top


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericOverflow as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
