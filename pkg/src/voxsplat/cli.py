"""Command-line interface tying the pipeline together.

Subcommands cover dataset generation, two-stage training, quantization,
composition, rendering, editing, inverse fitting, evaluation, and the
render service.  Domain failures exit with code 1 and a single-line
message on stderr; usage errors exit with code 2.
"""

import functools
import json
import os
import sys

import click
import numpy as np
from PIL import Image

from . import dvr
from .errors import MixedStage, OutOfRange, VoxSplatError
from .gaussians import Camera, orbit_camera
from .inverse import init_transform, optimize_to_reference, render_with_transform
from .losses import ssim
from .metrics import luv_difference_image, psnr
from .render_modes import RENDER_MODES, as_composed, render_mode_image, to_pil
from .scene import ComposedScene, EditState, load_model, save_model
from .shading import LightConfig
from .trainer import TrainConfig, train_base, train_editable, write_training_log
from .viewsampler import camera_rig, cameras_from_directions, entropy_score, fibonacci_sphere, views_for_scene
from .vq import quantize_model

# absolute ceiling of the busyness score: two 256-bin histograms, each at
# most log(256) nats per pixel
_MAX_ENTROPY_PER_PIXEL = 2.0 * np.log(256.0)


def _fail(exc):
    click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
    sys.exit(1)


def _handled(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (VoxSplatError, OSError, ValueError, KeyError) as exc:
            _fail(exc)

    return wrapper


def _threads_option(fn):
    return click.option("--threads", type=int, default=None,
                        help="Worker threads for the parallel kernels.")(fn)


def _apply_threads(threads):
    if threads is None:
        return
    if threads < 1:
        raise OutOfRange(f"--threads must be >= 1, got {threads}")
    try:
        import numba

        numba.set_num_threads(threads)
    except ImportError:
        pass  # pure-numpy fallback has no thread pool


@click.group()
def cli():
    """Editable Gaussian-splat engine for volume-rendered scenes."""


# ------------------------------------------------------------- gen-data


def _parse_volume(spec):
    kind, _, dims_txt = spec.partition(":")
    if kind in dvr.VOLUME_GENERATORS:
        dims = (64, 64, 64)
        if dims_txt:
            parts = [int(p) for p in dims_txt.split("x")]
            dims = tuple(parts * 3) if len(parts) == 1 else tuple(parts)
        return dvr.make_volume(kind, dims)
    # raw little-endian f32 grid with a JSON sidecar describing it
    for sidecar in (os.path.splitext(spec)[0] + ".json", spec + ".json"):
        if os.path.exists(sidecar):
            break
    else:
        raise OutOfRange(
            f"volume {spec!r} is not a builtin generator and has no JSON sidecar"
        )
    with open(sidecar) as f:
        desc = json.load(f)
    dims = desc["dims"]
    values = np.fromfile(spec, dtype="<f4").astype(np.float64)
    values = values.reshape(dims)
    return dvr.VolumeGrid(values, spacing=desc.get("spacing", np.ones(3)))


def _parse_tf(path):
    with open(path) as f:
        doc = json.load(f)
    entries = doc if isinstance(doc, list) else [doc]
    tfs = []
    for e in entries:
        if "v_lo" in e:
            tfs.append(dvr.TransferFunction1D.basic_bump(
                e["v_lo"], e["v_hi"], e["color"], e.get("opacity", 1.0)))
        else:
            tfs.append(dvr.TransferFunction1D.from_dict(e))
    return tfs[0] if len(tfs) == 1 else dvr.union_transfer_functions(tfs)


def _parse_light(txt):
    if txt is None:
        return LightConfig()
    parts = txt.split(",")
    mode = parts[0]
    polar = float(parts[1]) if len(parts) > 1 else 0.0
    azimuth = float(parts[2]) if len(parts) > 2 else 0.0
    return LightConfig(mode, polar, azimuth)


def _parse_res(txt):
    w, _, h = txt.partition("x")
    return int(w), int(h or w)


def _rig(count, radius, fov_y, width, height):
    try:
        return camera_rig(count, radius, fov_y=fov_y, width=width, height=height)
    except OutOfRange:
        return cameras_from_directions(
            fibonacci_sphere(count), radius, np.zeros(3), fov_y, width, height)


@cli.command("gen-data")
@click.option("--volume", required=True,
              help="Builtin generator (shells|ml|vortex[:DIMS]) or raw f32 grid file.")
@click.option("--tf", "tf_path", required=True, type=click.Path(exists=True),
              help="Transfer function JSON (bump spec, control points, or a list to union).")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--views", default="auto", show_default=True,
              help="'auto' (entropy probe) or an explicit count.")
@click.option("--res", default="128x128", show_default=True)
@click.option("--light", "light_txt", default=None,
              help="mode[,polar,azimuth], e.g. 'orbital,0.3,0.5'.")
@click.option("--fov", default=0.8, show_default=True)
@click.option("--radius", default=None, type=float,
              help="Camera orbit radius (default: 2.2x the volume half-diagonal).")
@_threads_option
@_handled
def gen_data(volume, tf_path, out_dir, views, res, light_txt, fov, radius, threads):
    """Render a ground-truth multi-view dataset with the volume renderer."""
    _apply_threads(threads)
    vol = _parse_volume(volume)
    tf = _parse_tf(tf_path)
    light = _parse_light(light_txt)
    width, height = _parse_res(res)
    if radius is None:
        lo, hi = vol.bbox
        radius = 1.1 * float(np.linalg.norm(hi - lo))

    if views == "auto":
        probe_cams = camera_rig(12, radius, fov_y=fov, width=width, height=height)
        probe = [dvr.render_view(vol, tf, c, light) for c in probe_cams]
        raw = entropy_score(probe)
        per_pixel = raw / (len(probe) * width * height)
        count = views_for_scene(min(per_pixel / _MAX_ENTROPY_PER_PIXEL, 1.0))
        click.echo(f"entropy probe: {per_pixel:.3f} nats/pixel -> {count} views")
    else:
        count = int(views)
    cams = _rig(count, radius, fov, width, height)
    dvr.generate_dataset(vol, tf, cams, light, out_dir)
    click.echo(f"wrote {count} views to {out_dir}")


# ---------------------------------------------------------------- train


@cli.command()
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--stage1-iters", default=30000, show_default=True)
@click.option("--stage2-iters", default=10000, show_default=True)
@click.option("--init-count", default=5000, show_default=True)
@click.option("--max-primitives", default=120000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--sequential", is_flag=True,
              help="Force a deterministic schedule (output is deterministic either way).")
@_threads_option
@_handled
def train(data_dir, out_path, stage1_iters, stage2_iters, init_count,
          max_primitives, seed, sequential, threads):
    """Two-stage training: view-dependent base model, then editable model."""
    del sequential  # training is bit-reproducible for any thread count
    _apply_threads(threads)
    dataset = dvr.load_dataset(data_dir)
    cfg = TrainConfig(stage1_iters=stage1_iters, stage2_iters=stage2_iters,
                      init_count=init_count, max_primitives=max_primitives,
                      seed=seed)
    base, log1 = train_base(dataset, cfg)
    editable, log2 = train_editable(base, dataset, cfg)
    save_model(editable, out_path)
    write_training_log(out_path + ".log.jsonl", log1 + log2)
    click.echo(f"trained {len(editable)} primitives -> {out_path}")


# ------------------------------------------------------------- quantize


@cli.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--k", default=256, show_default=True, help="Codebook size.")
@click.option("--seed", default=0, show_default=True)
@_handled
def quantize(in_path, out_path, k, seed):
    """Compress a model's attributes with per-attribute codebooks."""
    model = load_model(in_path)
    if isinstance(model, ComposedScene):
        raise MixedStage("quantize expects a basic model, not a composed scene")
    save_model(quantize_model(model, k=k, seed=seed), out_path)
    ratio = os.path.getsize(in_path) / os.path.getsize(out_path)
    click.echo(f"quantized k={k}: {ratio:.2f}x smaller -> {out_path}")


# -------------------------------------------------------------- compose


@cli.command()
@click.option("--in", "in_paths", required=True, multiple=True,
              type=click.Path(exists=True), help="Input models (repeatable).")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--light", "light_txt", default=None, help="mode[,polar,azimuth].")
@_handled
def compose(in_paths, out_path, light_txt):
    """Concatenate editable basic models into one composed scene."""
    models = []
    for p in in_paths:
        m = load_model(p)
        if isinstance(m, ComposedScene):
            models.extend(m.models)
        else:
            models.append(m)
    scene = ComposedScene.compose(models, _parse_light(light_txt))
    save_model(scene, out_path)
    click.echo(f"composed {len(models)} scenes ({scene.count} primitives) -> {out_path}")


# --------------------------------------------------------------- render


def _load_camera(spec, res, fov):
    if os.path.exists(spec):
        with open(spec) as f:
            return Camera.from_dict(json.load(f))
    try:
        polar, azimuth, radius = (float(p) for p in spec.split(","))
    except ValueError:
        raise OutOfRange(
            f"camera {spec!r} is neither a JSON file nor 'polar,azimuth,radius'"
        )
    width, height = _parse_res(res)
    return orbit_camera(np.zeros(3), radius, polar, azimuth, fov, width, height)


def _save_png(img, path):
    to_pil(img).save(path)


@cli.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--camera", "camera_spec", required=True,
              help="Camera JSON file or orbit 'polar,azimuth,radius'.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--mode", default="shaded", show_default=True,
              type=click.Choice(RENDER_MODES))
@click.option("--res", default="256x256", show_default=True,
              help="Image size for orbit cameras.")
@click.option("--fov", default=0.8, show_default=True)
@click.option("--sequential", is_flag=True,
              help="Force sequential compositing (output is identical).")
@_threads_option
@_handled
def render(model_path, camera_spec, out_path, mode, res, fov, sequential, threads):
    """Render a model or composed scene to a PNG."""
    del sequential
    _apply_threads(threads)
    model = load_model(model_path)
    cam = _load_camera(camera_spec, res, fov)
    _save_png(render_mode_image(model, cam, mode), out_path)
    click.echo(f"rendered {mode} -> {out_path}")


# ----------------------------------------------------------------- edit


@cli.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--scene", "scene_idx", default=0, show_default=True)
@click.option("--palette", default=None, help="r,g,b in [0,1].")
@click.option("--opacity-scale", default=None, type=float)
@click.option("--light", "light_txt", default=None, help="mode[,polar,azimuth].")
@click.option("--term-scales", default=None,
              help="ambient,diffuse,specular,shininess multipliers.")
@click.option("--out", "out_path", required=True, type=click.Path())
@_handled
def edit(model_path, scene_idx, palette, opacity_scale, light_txt,
         term_scales, out_path):
    """Recolor, fade, or relight one basic scene of a composed model."""
    scene = as_composed(load_model(model_path))
    if not 0 <= scene_idx < len(scene.models):
        raise OutOfRange(
            f"scene index {scene_idx} outside 0..{len(scene.models) - 1}")
    state = scene.edits[scene_idx]
    new_palette = state.palette_override
    if palette is not None:
        new_palette = np.array([float(v) for v in palette.split(",")])
    new_scale = state.opacity_scale if opacity_scale is None else opacity_scale
    scene.edits[scene_idx] = EditState(new_palette, new_scale)
    if light_txt is not None:
        new_light = _parse_light(light_txt)
        new_light.term_scales = scene.light.term_scales.copy()
        scene.light = new_light
    if term_scales is not None:
        scene.light.term_scales = np.array(
            [float(v) for v in term_scales.split(",")])
    save_model(scene, out_path)
    click.echo(f"edited scene {scene_idx} -> {out_path}")


# --------------------------------------------------------------- invert


@cli.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--reference", "ref_path", required=True, type=click.Path(exists=True))
@click.option("--camera", "camera_spec", required=True)
@click.option("--iters", default=1000, show_default=True)
@click.option("--lr", default=0.01, show_default=True)
@click.option("--res", default="256x256", show_default=True)
@click.option("--fov", default=0.8, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@_threads_option
@_handled
def invert(model_path, ref_path, camera_spec, iters, lr, res, fov,
           out_path, threads):
    """Fit palette/opacity/light magnitudes so the render matches a reference."""
    _apply_threads(threads)
    scene = as_composed(load_model(model_path))
    cam = _load_camera(camera_spec, res, fov)
    ref = np.asarray(Image.open(ref_path)).astype(np.float64) / 255.0
    if ref.shape[-1] == 3:
        ref = np.concatenate([ref, np.ones(ref.shape[:2] + (1,))], axis=-1)

    fitted, losses = optimize_to_reference(scene, init_transform(scene),
                                           ref, cam, iters=iters, lr=lr)
    scene.transform = fitted.to_dict()
    for i in range(len(scene.models)):
        scene.edits[i] = EditState(np.clip(fitted.c_p[i], 0.0, 1.0),
                                   float(fitted.opacity_scale[i]))
    save_model(scene, out_path)
    final = psnr(render_with_transform(scene, fitted, cam, dtype=np.float64), ref)
    click.echo(f"fit {iters} iters, loss {losses[-1]:.3e}, "
               f"psnr {final:.2f} dB -> {out_path}")


# ----------------------------------------------------------------- eval


@cli.command("eval")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--report", "report_path", required=True, type=click.Path())
@click.option("--heatmap-dir", default=None, type=click.Path(),
              help="Write a perceptual-difference heatmap PNG per view.")
@_threads_option
@_handled
def eval_cmd(model_path, data_dir, report_path, heatmap_dir, threads):
    """Score a model against a dataset (PSNR/SSIM per view)."""
    _apply_threads(threads)
    model = load_model(model_path)
    dataset = dvr.load_dataset(data_dir)
    if heatmap_dir:
        os.makedirs(heatmap_dir, exist_ok=True)
    rows = []
    for i, (cam, gt) in enumerate(zip(dataset.cameras, dataset.images)):
        img = render_mode_image(model, cam, "shaded")
        rows.append({
            "view": dataset.manifest["cameras"][i]["file"],
            "psnr": float(psnr(img, gt)),
            "ssim": float(ssim(img[..., :3], gt[..., :3])[0]),
        })
        if heatmap_dir:
            _save_png(luv_difference_image(img, gt),
                      os.path.join(heatmap_dir, f"diff_{i:04d}.png"))
    report = {
        "model": os.path.abspath(model_path),
        "dataset": os.path.abspath(data_dir),
        "views": rows,
        "mean_psnr": float(np.mean([r["psnr"] for r in rows])),
        "mean_ssim": float(np.mean([r["ssim"] for r in rows])),
    }
    with open(report_path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
    click.echo(f"mean psnr {report['mean_psnr']:.2f} dB, "
               f"ssim {report['mean_ssim']:.4f} -> {report_path}")


# ---------------------------------------------------------------- serve


@cli.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--bind", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@_threads_option
@_handled
def serve(model_path, bind, port, threads):
    """Serve the interactive render/edit HTTP API."""
    _apply_threads(threads)
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(model_path), host=bind, port=port)


def main():
    cli(prog_name="voxsplat")


if __name__ == "__main__":
    main()
