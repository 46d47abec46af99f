#!/usr/bin/env python3
"""
Main script for StreetSplat

Command-line entry point:
1. train      - initialize a scene from a dataset and optimize it
2. render     - render one camera of a checkpoint
3. eval       - render a split and write a metrics report
4. edit       - apply an edit script and render
5. decompose  - render the background, all objects or one object
6. synth      - generate a synthetic benchmark dataset

Exit codes: 0 success, 2 invalid input, 1 runtime failure.
"""

import os
import sys
import logging
import argparse
from datetime import datetime

import numpy as np

# Internal imports
from apps.editing import EditScript, apply_edit
from apps.evaluate import evaluate, write_report
from ingest.dataset import load_dataset
from ingest.initialization import InitConfig, init_scene
from renderer.rasterizer import RenderConfig, render, render_decomposed
from scene.checkpoint import load_checkpoint
from synth.synthbench import SynthSpec, write_synth
from training.trainer import TrainConfig, train
from utils.config import (load_environment, load_config_file, seed_override, default_threads,
                          dataclass_from_dict, ENV_LOG_LEVEL)
from utils.errors import ValidationError, ConfigError
from utils.filtering import split_frames
from utils.storage import write_png, save_float_dump, load_json

logger = logging.getLogger(__name__)

CONFIG_SECTIONS = ('init', 'train', 'waymo_split')


def configure_logging():
    """Console plus dated log file, as for every other run of the tool."""
    os.makedirs('logs', exist_ok=True)
    logging.basicConfig(
        level=os.environ.get(ENV_LOG_LEVEL, 'INFO').upper(),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(f"logs/streetsplat_{datetime.now().strftime('%Y%m%d')}.log"),
            logging.StreamHandler(sys.stdout)
        ]
    )


def build_parser():
    parser = argparse.ArgumentParser(prog='streetsplat',
                                     description='Street scene Gaussian reconstruction and rendering')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('train', help='initialize and optimize a scene')
    p.add_argument('--data', required=True, help='dataset directory (contains scene.json)')
    p.add_argument('--config', help='YAML/JSON config with init and train sections')
    p.add_argument('--out', required=True, help='output directory')
    p.add_argument('--pose-noise', help='pose_noise.json with true deltas for residual metrics')

    p = sub.add_parser('render', help='render a checkpoint camera')
    p.add_argument('--ckpt', required=True)
    p.add_argument('--frame', type=int, required=True, help='timestep')
    p.add_argument('--camera', type=int, default=0, help='camera id')
    p.add_argument('--out', required=True, help='output PNG')
    p.add_argument('--dump', help='also write raw float buffers to this file')

    p = sub.add_parser('eval', help='evaluate a checkpoint on a dataset split')
    p.add_argument('--ckpt', required=True)
    p.add_argument('--data', required=True)
    p.add_argument('--split', choices=['train', 'test', 'all'], default='test')
    p.add_argument('--waymo-split', action='store_true', help='every 4th frame is a test frame')
    p.add_argument('--report', required=True, help='output JSON report')

    p = sub.add_parser('edit', help='apply an edit script and render')
    p.add_argument('--ckpt', required=True)
    p.add_argument('--script', required=True, help='edit script JSON')
    p.add_argument('--frame', type=int, required=True)
    p.add_argument('--camera', type=int, default=0)
    p.add_argument('--out', required=True)

    p = sub.add_parser('decompose', help='render background, objects or a single object')
    p.add_argument('--ckpt', required=True)
    p.add_argument('--target', required=True, help="'background', 'objects', 'all' or an object id")
    p.add_argument('--frame', type=int, required=True)
    p.add_argument('--camera', type=int, default=0)
    p.add_argument('--out', required=True)

    p = sub.add_parser('synth', help='generate a synthetic benchmark dataset')
    p.add_argument('--spec', help='YAML/JSON synth spec')
    p.add_argument('--out', required=True)

    for p in sub.choices.values():
        p.add_argument('--threads', type=int, help='render threads (default STREETSPLAT_THREADS or 1)')
    return parser


def _camera(scene, frame, camera_id):
    camera = scene.cameras.get((frame, camera_id))
    if camera is None:
        raise ValidationError(f"checkpoint has no camera {camera_id} at frame {frame}")
    return camera


def _threads(args):
    return args.threads if args.threads else default_threads()


def _load_true_deltas(path):
    data = load_json(path)
    return {k: {'translation': np.asarray(v['translation'], dtype=np.float64),
                'yaw': np.asarray(v['yaw'], dtype=np.float64)} for k, v in data.items()}


def cmd_train(args):
    config = load_config_file(args.config) if args.config else {}
    unknown = sorted(set(config) - set(CONFIG_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
    train_config = TrainConfig.from_dict(config.get('train', {}))
    train_config.seed = seed_override(train_config.seed)
    if args.threads:
        train_config.num_threads = args.threads
    init_config = dataclass_from_dict(InitConfig, config.get('init', {}), 'init')
    init_config.seed = train_config.seed

    dataset = load_dataset(args.data)
    if config.get('waymo_split', False):
        frames = split_frames(len(dataset.frames), 'train', waymo_split=True)
        train_config.train_frames = frames
        init_config.train_frames = frames
    true_deltas = _load_true_deltas(args.pose_noise) if args.pose_noise else None

    scene = init_scene(dataset, init_config)
    result = train(dataset, scene, train_config, args.out, true_deltas)
    logger.info(f"Training complete; checkpoint in {os.path.join(args.out, 'checkpoint')}")
    return result


def _render_config(args):
    return RenderConfig(timestep=args.frame, num_threads=_threads(args))


def cmd_render(args):
    scene = load_checkpoint(args.ckpt)
    outputs = render(scene, _camera(scene, args.frame, args.camera), _render_config(args))
    write_png(outputs.color, args.out)
    if args.dump:
        save_float_dump({'color': outputs.color, 'opacity': outputs.opacity,
                         'depth': outputs.depth, 'semantic': outputs.semantic}, args.dump)
    logger.info(f"Rendered frame {args.frame} camera {args.camera} to {args.out}")


def cmd_eval(args):
    scene = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    indices = split_frames(len(dataset.frames), args.split, waymo_split=args.waymo_split)
    if not indices:
        raise ValidationError(f"split {args.split!r} selects no frames")
    output_dir = os.path.dirname(os.path.abspath(args.report))
    report = evaluate(scene, dataset, indices, output_dir, num_threads=_threads(args))
    write_report(report, args.report)
    logger.info(f"Evaluated {len(indices)} frames; report at {args.report}")


def cmd_edit(args):
    scene = load_checkpoint(args.ckpt)
    edited = apply_edit(scene, EditScript.load(args.script))
    outputs = render(edited, _camera(edited, args.frame, args.camera), _render_config(args))
    write_png(outputs.color, args.out)
    logger.info(f"Rendered edited frame {args.frame} to {args.out}")


def cmd_decompose(args):
    scene = load_checkpoint(args.ckpt)
    result = render_decomposed(scene, _camera(scene, args.frame, args.camera),
                               _render_config(args), args.target)
    write_png(result.outputs.color, args.out)
    logger.info(f"Rendered {args.target} for frame {args.frame} to {args.out}")


def cmd_synth(args):
    data = load_config_file(args.spec) if args.spec else {}
    spec = SynthSpec.from_dict(data)
    spec.seed = seed_override(spec.seed)
    paths = write_synth(spec, args.out)
    logger.info(f"Synthetic dataset written to {paths['dataset']}")


COMMANDS = {
    'train': cmd_train,
    'render': cmd_render,
    'eval': cmd_eval,
    'edit': cmd_edit,
    'decompose': cmd_decompose,
    'synth': cmd_synth,
}


def main(argv=None):
    """Main execution function"""
    load_environment()
    configure_logging()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2
    try:
        if args.threads is not None and args.threads < 1:
            raise ValidationError("--threads must be >= 1")
        logger.info(f"Starting {args.command}")
        COMMANDS[args.command](args)
        return 0
    except (ValidationError, FileNotFoundError) as e:
        logger.error(f"Invalid input: {e}")
        return 2
    except Exception as e:
        logger.error(f"Error in {args.command}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
