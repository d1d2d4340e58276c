# File: main.py
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import click
from dotenv import load_dotenv
from langgraph.graph import END, START, StateGraph
from tqdm import tqdm

from agents.gaussian_sampler_agent import GaussianSamplerAgent
from agents.layer_builder_agent import LayerBuilderAgent
from agents.package_storer_agent import PackageStorerAgent
from agents.thickness_agent import ThicknessAgent
from integrations.camera_io import read_cameras, write_cameras
from integrations.image_io import read_png, write_png
from integrations.obj_io import read_obj, write_obj
from integrations.optimizer_state_io import STATE_FILE, read_optimizer_state, write_optimizer_state
from integrations.package_io import load_package, store_package
from integrations.ply_io import read_gaussian_ply, write_gaussian_ply
from schemas.build_state import BuildState
from schemas.config_schema import FrostingConfig, load_config
from schemas.errors import FrostingError, InvariantViolation, SchemaError
from schemas.gaussian_schema import CloudRole
from services.cells_service import contraction_from_cameras
from services.depth_advisor import advise_depth
from services.frosted_param import deform_scene
from services.metrics import psnr, ssim
from services.optimizer_service import optimize
from services.renderer import render, render_cloud
from services.toy_scene import icosphere, orbit_cameras, sphere_clouds

logger = logging.getLogger("frosting")

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s: %(message)s"


def emit(payload: dict) -> None:
    """Analytic results go to stdout as one JSON object; everything else is logged to stderr."""
    click.echo(json.dumps(payload, sort_keys=True))


def has_layer(state: BuildState) -> str:
    """Route on whether the layer builder produced cells."""
    if state.layer is not None and state.layer.cell_count:
        return "continue"
    logger.error("❌ Layer construction produced no cells, stopping")
    return "end"


def build_pipeline(out_dir):
    """Compile the build graph: thickness -> layer -> sampling -> package."""
    graph_builder = StateGraph(BuildState)
    # NODES
    graph_builder.add_node("thickness", ThicknessAgent().run)
    graph_builder.add_node("layer_builder", LayerBuilderAgent().run)
    graph_builder.add_node("gaussian_sampler", GaussianSamplerAgent().run)
    graph_builder.add_node("package_storer", PackageStorerAgent(out_dir).run)

    # EDGES
    graph_builder.add_edge(START, "thickness")
    graph_builder.add_edge("thickness", "layer_builder")
    # NOTHING TO SAMPLE WITHOUT CELLS
    graph_builder.add_conditional_edges(
        source="layer_builder",
        path=has_layer,
        path_map={"continue": "gaussian_sampler", "end": END},
    )
    graph_builder.add_edge("gaussian_sampler", "package_storer")
    graph_builder.add_edge("package_storer", END)
    return graph_builder.compile()


def run_pipeline(state: BuildState, graph) -> BuildState:
    result = graph.invoke(state)
    # THE COMPILED GRAPH HANDS BACK CHANNEL VALUES, NOT THE MODEL
    return BuildState.model_validate(result)


@click.group()
@click.option("--threads", type=click.IntRange(min=1), default=None, help="Worker threads (default: all cores)")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="YAML config file")
@click.option(
    "--log-level",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    default=None,
    help="Log level (default: FROSTING_LOG_LEVEL or INFO)",
)
@click.pass_context
def main(ctx: click.Context, threads: Optional[int], config_path: Optional[str], log_level: Optional[str]):
    """Build, render, refine and deform Gaussian Frosting scenes."""
    level = (log_level or os.getenv("FROSTING_LOG_LEVEL", "INFO")).upper()
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)
    ctx.obj = {"config": load_config(config_path), "threads": threads}


# DEPTH ADVISOR


@main.command()
@click.option("--regularized", "--ply", "ply", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--gamma", type=float, default=None, help="Depth scale (default 100)")
@click.option("--default-depth", type=click.IntRange(min=1), default=None, help="Maximum depth (default 10)")
@click.pass_obj
def depth(obj: dict, ply: str, gamma: Optional[float], default_depth: Optional[int]):
    """Recommend a Poisson octree depth for a Gaussian cloud."""
    cfg = obj["config"].depth
    gamma = cfg.gamma if gamma is None else gamma
    default_depth = cfg.default_depth if default_depth is None else default_depth
    cloud = read_gaussian_ply(ply, CloudRole.regularized)
    advice = advise_depth(cloud, gamma, default_depth, cfg.quantile, threads=obj["threads"])
    emit({**advice.to_json(), "default_depth": default_depth})


# LAYER CONSTRUCTION + SAMPLING


@main.command()
@click.option("--unconstrained", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--regularized", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--mesh", "mesh_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--lambda", "level", type=float, default=None, help="Isosurface density level (default 0.01)")
@click.option("--k", type=float, default=None, help="Interval expansion factor (default 3)")
@click.option("--budget", type=click.IntRange(min=1), default=None, help="Number of frosted Gaussians")
@click.option("--seed", type=click.IntRange(min=0), default=None)
@click.option("--cameras", "cameras_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option(
    "--strategy",
    type=click.Choice(["adaptive", "regularized_only", "constant"]),
    default=None,
    help="Thickness strategy (default adaptive)",
)
@click.pass_obj
def build(obj: dict, unconstrained, regularized, mesh_path, out, level, k, budget, seed, cameras_path, strategy):
    """Build the frosting layer around a mesh and sample its Gaussians."""
    config: FrostingConfig = obj["config"]
    thickness = config.thickness.model_copy(
        update={
            key: value
            for key, value in {"level": level, "k": k, "strategy": strategy}.items()
            if value is not None
        }
    )
    sampling_update = {key: value for key, value in {"budget": budget, "seed": seed}.items() if value is not None}
    if cameras_path is not None:
        cameras = read_cameras(cameras_path)
        sampling_update["contraction"] = contraction_from_cameras([cam.center for cam in cameras])
    config = config.model_copy(
        update={"thickness": thickness, "sampling": config.sampling.model_copy(update=sampling_update)}
    )
    # model_copy SKIPS VALIDATION, SO RE-VALIDATE THE MERGED CONFIG
    config = FrostingConfig(**config.model_dump())

    state = BuildState(
        unconstrained=read_gaussian_ply(unconstrained, CloudRole.unconstrained),
        regularized=read_gaussian_ply(regularized, CloudRole.regularized),
        mesh=read_obj(mesh_path),
        config=config,
        threads=obj["threads"],
    )
    state = run_pipeline(state, build_pipeline(out))
    if state.scene is None:
        raise InvariantViolation("build pipeline finished without a scene")
    emit(
        {
            "package": out,
            "vertices": state.mesh.vertex_count,
            "cells": state.layer.cell_count,
            "gaussians": len(state.scene.gaussians),
            "thickness": state.layer.thickness_summary(),
            "fallbacks": {
                "regularized": sum(r.regularized_fallback for r in state.target_records),
                "unconstrained": sum(r.unconstrained_fallback for r in state.target_records),
            },
        }
    )


# RENDERING


@main.command(name="render")
@click.option("--pkg", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--ply", type=click.Path(exists=True, dir_okay=False), default=None, help="Render a raw cloud instead")
@click.option("--cameras", "cameras_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_obj
def render_command(obj: dict, pkg, ply, cameras_path, out):
    """Render one PNG per camera."""
    if (pkg is None) == (ply is None):
        raise click.UsageError("pass exactly one of --pkg or --ply")
    cfg = obj["config"].render
    cameras = read_cameras(cameras_path)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scene = load_package(pkg) if pkg is not None else None
    cloud = read_gaussian_ply(ply) if ply is not None else None

    written = []
    for cam in tqdm(cameras, desc="Rendering", unit="view", leave=False, disable=None):
        if scene is not None:
            image = render(scene, cam, cfg, threads=obj["threads"])
        else:
            image = render_cloud(cloud, cam, cfg, threads=obj["threads"])
        path = out_dir / f"{cam.name}.png"
        write_png(path, image)
        written.append(str(path))
    logger.info(f"✅ Rendered {len(written)} views into {out_dir}")
    emit({"images": written})


# REFINEMENT


def _dataset(cameras, images_dir: Path):
    dataset = []
    for cam in cameras:
        path = images_dir / f"{cam.name}.png"
        if not path.exists():
            raise SchemaError(cam.name, path=str(images_dir), detail="no image for this camera")
        image = read_png(path)
        if (image.width, image.height) != (cam.width, cam.height):
            raise SchemaError(
                cam.name,
                path=str(path),
                detail=f"image is {image.width}x{image.height}, camera is {cam.width}x{cam.height}",
            )
        dataset.append((cam, image))
    return dataset


@main.command(name="optimize")
@click.option("--pkg", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--cameras", "cameras_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--images", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--iters", type=click.IntRange(min=0), default=None, help="Iterations (default 2000)")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=click.IntRange(min=0), default=None)
@click.option("--resume", is_flag=True, help="Continue from the optimizer state stored in --pkg")
@click.pass_obj
def optimize_command(obj: dict, pkg, cameras_path, images, iters, out, seed, resume):
    """Refine the frosted Gaussians against ground-truth images."""
    config: FrostingConfig = obj["config"]
    update = {key: value for key, value in {"iterations": iters, "seed": seed}.items() if value is not None}
    cfg = config.optimizer.model_copy(update=update)
    scene = load_package(pkg)
    dataset = _dataset(read_cameras(cameras_path), Path(images))

    state = None
    if resume:
        state_path = Path(pkg) / STATE_FILE
        if state_path.exists():
            state = read_optimizer_state(state_path)
            logger.info(f"Resuming from step {state.step}")
        else:
            logger.warning(f"⚠️ No optimizer state in {pkg}, starting fresh")

    refined, result = optimize(scene, dataset, cfg, config.render, state=state, threads=obj["threads"])
    store_package(out, refined)
    if result.state is not None:
        write_optimizer_state(Path(out) / STATE_FILE, result.state)
    emit(
        {
            "package": out,
            "gaussians": len(refined.gaussians),
            "iterations": len(result.losses),
            "initial_loss": result.losses[0] if result.losses else None,
            "final_loss": result.losses[-1] if result.losses else None,
            "final_ema": result.ema[-1] if result.ema else None,
        }
    )


# DEFORMATION


@main.command()
@click.option("--pkg", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--deformed-mesh", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option(
    "--blend",
    type=click.Choice(["log", "linear"]),
    default=None,
    help="How corner transforms are mixed (default log)",
)
@click.pass_obj
def deform(obj: dict, pkg, deformed_mesh, out, blend):
    """Carry a package onto a deformed copy of its mesh."""
    cfg = obj["config"].deform
    scene = deform_scene(
        load_package(pkg), read_obj(deformed_mesh), blend=blend or cfg.blend, strict=cfg.strict
    )
    store_package(out, scene)
    emit({"package": out, "gaussians": len(scene.gaussians), "thickness": scene.layer.thickness_summary()})


# IMAGE METRICS


@main.command()
@click.option("--pred", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--gt", required=True, type=click.Path(exists=True, file_okay=False))
@click.pass_obj
def metrics(obj: dict, pred, gt):
    """PSNR and SSIM of predicted images against ground truth, matched by file name."""
    gt_paths = sorted(Path(gt).glob("*.png"))
    if not gt_paths:
        raise SchemaError("*.png", path=gt, detail="no ground-truth images")
    per_image = {}
    for gt_path in gt_paths:
        pred_path = Path(pred) / gt_path.name
        if not pred_path.exists():
            raise SchemaError(gt_path.name, path=pred, detail="no matching prediction")
        a, b = read_png(pred_path), read_png(gt_path)
        if a.pixels.shape != b.pixels.shape:
            raise SchemaError(gt_path.name, path=str(pred_path), detail="image sizes differ")
        per_image[gt_path.name] = {"psnr": psnr(a, b), "ssim": ssim(a, b)}
    count = len(per_image)
    emit(
        {
            "psnr": sum(m["psnr"] for m in per_image.values()) / count,
            "ssim": sum(m["ssim"] for m in per_image.values()) / count,
            "images": per_image,
        }
    )


# TOY INPUTS


@main.command()
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--count", type=click.IntRange(min=10), default=2000, help="Gaussians per cloud")
@click.option("--subdivisions", type=click.IntRange(min=0, max=5), default=2)
@click.option("--views", type=click.IntRange(min=1), default=8)
@click.option("--size", type=click.IntRange(min=8), default=64, help="Image width and height")
@click.option("--seed", type=click.IntRange(min=0), default=0)
def toy(out, count, subdivisions, views, size, seed):
    """Write a small synthetic scene: two clouds, a mesh and an orbit of cameras."""
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    unconstrained, regularized = sphere_clouds(count, seed=seed)
    write_gaussian_ply(out_dir / "unconstrained.ply", unconstrained)
    write_gaussian_ply(out_dir / "regularized.ply", regularized)
    write_obj(out_dir / "mesh.obj", icosphere(subdivisions))
    write_cameras(out_dir / "cameras.json", orbit_cameras(views, width=size, height=size))
    logger.info(f"✅ Wrote toy scene to {out_dir}")
    emit({name: str(out_dir / name) for name in ("unconstrained.ply", "regularized.ply", "mesh.obj", "cameras.json")})


def dispatch(argv: Optional[List[str]] = None) -> int:
    """Run the CLI and map failures to exit codes: 1 for user errors, 2 for internal ones."""
    try:
        rv = main.main(args=argv, prog_name="frosting", standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return 1
    except click.Abort:
        return 1
    except InvariantViolation as e:
        logger.exception(f"❌ Internal invariant broken: {e}")
        return 2
    except FrostingError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        click.echo(f"Error: {e}", err=True)
        return 1
    except Exception as e:
        logger.exception(f"❌ Unexpected failure: {e}")
        return 2
    return rv if isinstance(rv, int) else 0


def run() -> None:
    load_dotenv()
    sys.exit(dispatch())


if __name__ == "__main__":
    run()
