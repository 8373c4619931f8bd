"""Command-line front door: plan, edit, train, bench, metrics, serve.

Errors print an ApiError-shaped JSON object on stderr and exit with
2 (validation), 3 (not found) or 4 (model/stage failure). All randomness
flows from --seed, which defaults to 0; two runs with the same arguments
produce byte-identical outputs.
"""

from __future__ import annotations

import json
import sys
import tempfile

import click
import numpy as np

from . import imageio
from .bench import BenchmarkManifest, run_benchmark, write_report_csv, write_report_json
from .conductor import (
    Conductor,
    Overrides,
    SessionStore,
    build_toy_bundle,
    load_bundle,
)
from .diffusion import SamplerConfig
from .errors import MaskEditError, exit_code_for
from .instructor import ClientConfig, InstructorClients, RemoteDetector, RemoteMLLM, build_plan, make_stub_clients
from .metrics import TokenOverlapBackend, compute_fidelity
from .schedule import make_schedule


def _clients(kind: str) -> InstructorClients:
    if kind == "stub":
        return make_stub_clients()
    mllm_cfg = ClientConfig.from_env("MASKEDIT_MLLM")
    det_cfg = ClientConfig.from_env("MASKEDIT_DETECTOR")
    if not (mllm_cfg and det_cfg):
        raise click.UsageError(
            "remote clients need MASKEDIT_MLLM_ENDPOINT and MASKEDIT_DETECTOR_ENDPOINT"
        )
    return InstructorClients(RemoteMLLM(mllm_cfg), RemoteDetector(det_cfg))


def _bundle(ckpt: str | None):
    # the untrained toy bundle is pinned to seed 0 so the CLI and the
    # service agree on model weights; --seed only drives the sampling
    return load_bundle(ckpt) if ckpt else build_toy_bundle(seed=0)


@click.group()
def main():
    """Instruction-guided image editing toolkit."""


@main.command("plan")
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--instruction", required=True)
@click.option("--clients", "clients_kind", type=click.Choice(["stub", "remote"]),
              default="stub", show_default=True)
def plan_cmd(image_path, instruction, clients_kind):
    """Print the edit plan for an instruction as JSON (mask inline)."""
    image = imageio.load_image(image_path)
    plan = build_plan(instruction, image, _clients(clients_kind))
    click.echo(plan.to_json())


@main.command("edit")
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--instruction", required=True)
@click.option("--mask", "mask_path", type=click.Path(exists=True))
@click.option("--caption")
@click.option("--w", "preservation_scale", type=float, default=1.0, show_default=True)
@click.option("--blur", "blur_radius", type=int, default=7, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--steps", type=int, default=10, show_default=True)
@click.option("--ckpt", type=click.Path(exists=True))
@click.option("--clients", "clients_kind", type=click.Choice(["stub", "remote"]),
              default="stub", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def edit_cmd(image_path, instruction, mask_path, caption, preservation_scale,
             blur_radius, seed, steps, ckpt, clients_kind, out_path):
    """One-shot edit; writes the result PNG and prints round stats JSON."""
    image = imageio.load_image(image_path)
    bundle = _bundle(ckpt)
    with tempfile.TemporaryDirectory(prefix="maskedit-cli-") as tmp:
        store = SessionStore(tmp)
        conductor = Conductor(store, bundle, clients=_clients(clients_kind))
        session = conductor.create_session(image)
        plan = build_plan(instruction, image, conductor.clients)
        overrides = Overrides(
            mask=imageio.load_mask(mask_path) if mask_path else None,
            caption=caption,
            preservation_scale=preservation_scale,
            blur_radius=blur_radius,
        )
        rnd = conductor.execute_plan(
            session.id, plan, overrides=overrides,
            scfg=SamplerConfig(steps=steps, seed=seed),
        )
        if rnd.status != "done":
            sys.stderr.write(json.dumps(rnd.error) + "\n")
            sys.exit(4)
        imageio.save_image(out_path, store.load_image(rnd.result_ref))
    click.echo(json.dumps({
        "edit_type": plan.edit_type, "target_object": plan.target_object,
        "caption_used": rnd.caption_used, "seed": seed, "steps": steps,
        "w": rnd.preservation_scale, "blur_radius": rnd.blur_radius,
        "denoiser_evals": rnd.denoiser_evals, "timing_ms": rnd.timing_ms,
        "out": out_path,
    }))


@main.command("train")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def train_cmd(config_path, out_dir):
    """Pretrain the base, then train the branch; writes a checkpoint dir."""
    from pathlib import Path

    from .denoiser import ConvDenoiser, StackSpec
    from .branch import BranchNetwork
    from .conductor import IdentityCodec
    from .embedding import CaptionEmbedder
    from .scenes import synth_dataset
    from .training import (
        TrainConfig,
        build_probe,
        make_training_pair,
        pretrain_base,
        save_loss_curve,
        train_branch,
    )

    with open(config_path) as fh:
        cfg = json.load(fh)
    seed = int(cfg.get("seed", 0))
    size = int(cfg.get("image_size", 24))
    hidden = int(cfg.get("hidden", 16))
    channels = 3
    sched = make_schedule(int(cfg.get("T", 1000)),
                          float(cfg.get("beta_min", 1e-4)),
                          float(cfg.get("beta_max", 2e-2)))
    embedder = CaptionEmbedder(int(cfg.get("cond_dim", 32)))
    codec = IdentityCodec()
    rng = np.random.default_rng(seed)
    scenes = synth_dataset(rng, int(cfg.get("n_scenes", 24)), size=size)

    base = ConvDenoiser(StackSpec(channels, (hidden, hidden, channels),
                                  time_dim=int(cfg.get("time_dim", 16)),
                                  cond_dim=embedder.dim), seed=seed)
    base_cfg = TrainConfig(steps=int(cfg.get("base_steps", 300)),
                           batch=int(cfg.get("batch", 4)),
                           learning_rate=float(cfg.get("base_lr", 0.05)),
                           seed=seed)
    base_curve = pretrain_base(base, scenes, base_cfg, sched, embedder, codec)

    mix = cfg.get("mask_mix", {"random_brush": 0.4, "segmentation_like": 0.4,
                               "deletion_pair": 0.2})
    pair_rng = np.random.default_rng(seed + 1)
    pairs = [make_training_pair(scenes[i % len(scenes)], pair_rng, mix)
             for i in range(int(cfg.get("n_pairs", 48)))]
    branch = BranchNetwork.for_base(base, seed=seed + 2)
    branch_cfg = TrainConfig(steps=int(cfg.get("branch_steps", 300)),
                             batch=int(cfg.get("batch", 4)),
                             learning_rate=float(cfg.get("branch_lr", 0.05)),
                             seed=seed, mask_mix_weights=mix)
    probe = build_probe(pairs, np.random.default_rng(seed + 3), sched,
                        embedder, codec)
    result = train_branch(base, branch, pairs, branch_cfg, sched,
                          embedder, codec, probe=probe)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base.save(out / "base.npz")
    branch.save(out / "branch.npz")
    with open(out / "config.json", "w") as fh:
        json.dump({"T": sched.total_steps, "beta_min": sched.beta_min,
                   "beta_max": sched.beta_max, "image_size": size,
                   "seed": seed}, fh, indent=2)
    save_loss_curve(out / "loss_base.csv", base_curve)
    save_loss_curve(out / "loss_branch.csv", result.curve)
    save_loss_curve(out / "loss_branch_probe.csv", result.probe_curve)
    click.echo(json.dumps({
        "out": str(out), "base_final_loss": base_curve[-1][1],
        "branch_final_loss": result.curve[-1][1],
        "probe_loss_first": result.probe_curve[0][1],
        "probe_loss_last": result.probe_curve[-1][1],
    }))


@main.command("bench")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--ckpt", type=click.Path(exists=True))
@click.option("--report", "report_path", required=True, type=click.Path())
@click.option("--steps", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
def bench_cmd(manifest_path, ckpt, report_path, steps, seed, jobs):
    """Run a benchmark manifest; writes CSV (and JSON next to it)."""
    manifest = BenchmarkManifest.load(manifest_path)
    report = run_benchmark(manifest, _bundle(ckpt),
                           scfg=SamplerConfig(steps=steps, seed=seed),
                           backend=TokenOverlapBackend(), jobs=jobs)
    write_report_csv(report_path, report)
    write_report_json(str(report_path) + ".json", report)
    click.echo(json.dumps({"report": report_path, "summary": report["summary"],
                           "n_failed": report["n_failed"]}))


@main.command("metrics")
@click.option("--a", "a_path", required=True, type=click.Path(exists=True))
@click.option("--b", "b_path", required=True, type=click.Path(exists=True))
@click.option("--mask", "mask_path", type=click.Path(exists=True))
def metrics_cmd(a_path, b_path, mask_path):
    """Fidelity metrics between two PNGs (over mask==0 when given)."""
    a = imageio.load_image(a_path)
    b = imageio.load_image(b_path)
    mask = imageio.load_mask(mask_path) if mask_path else None
    report = compute_fidelity(a, b, region_mask=mask)
    click.echo(json.dumps(report.to_dict()))


@main.command("serve")
@click.option("--store", "store_dir", default="./maskedit-store", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--ckpt", type=click.Path(exists=True))
@click.option("--cors", default="http://localhost:5173", show_default=True)
def serve_cmd(store_dir, port, ckpt, cors):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    bundle = load_bundle(ckpt) if ckpt else None
    app = create_app(store_dir, bundle=bundle,
                     cors_origins=tuple(filter(None, cors.split(","))))
    uvicorn.run(app, host="127.0.0.1", port=port)


def entry() -> None:
    try:
        main(standalone_mode=False)
    except MaskEditError as exc:
        sys.stderr.write(json.dumps(exc.to_api_error()) + "\n")
        sys.exit(exit_code_for(exc))
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(1)


if __name__ == "__main__":
    entry()
