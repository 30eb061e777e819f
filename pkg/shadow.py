#!/usr/bin/env python3
"""
Single-image shadow detection

Finds shadow edges with a structured CNN that labels the 5×5 centre of
28×28 patches around Canny edges, then recovers full shadow regions by a
least-squares optimization over superpixels seeded from those edges.

Commands:
  synth         generate a synthetic dataset with exact groundtruth
  train         sample patches from a dataset and train the CNN
  detect-edges  CNN shadow-edge probabilities for one image
  detect        full pipeline: edges → superpixels → measures → shadow mask
  optimize      shadow mask from a precomputed binary shadow-edge map
  eval          accuracies and ROC of predicted masks against groundtruth
  gradcheck     verify backpropagation against finite differences
"""

import argparse
import glob
import json
import os
import sys

import numpy as np

from shadowkit import __version__
from shadowkit.canny import canny
from shadowkit.cnn import init_model
from shadowkit.config import Config, config_options, parse_value, resolve_config, write_resolved_config
from shadowkit.dataprep import (
    LabeledPatch, apply_normalization, compute_normalization, load_edge_groundtruth, load_manifest,
    sample_patches, split_even_odd, write_warnings,
)
from shadowkit.errors import DatasetError, ShadowKitError
from shadowkit.evalmetrics import (
    aggregate, count_isolated_pixels, image_metrics, roc_auc, write_report, write_roc_csv,
)
from shadowkit.measures import compute_measures, write_measures_csv
from shadowkit.modelfile import load_model, save_model
from shadowkit.shadowopt import assemble_system, optimize_shadows, residual_norm
from shadowkit.superpixels import classify_boundaries, segment
from shadowkit.synthgen import generate_suite
from shadowkit.training import cell_accuracy, grad_check, sgd_train
from shadowkit.utils import (
    derive_seed, ensure_dir, file_stem, load_binary, load_rgb, load_soft16, sanitize_stem,
    save_binary_png, save_label_png, save_soft_png, write_csv,
)
from shadowkit.voting import predict_structured, threshold_edges


GRADCHECK_TOLERANCE = 1e-4


def banner(title: str):
    print()
    print("=" * 60)
    print(f"  {title}")
    print("=" * 60)
    print()


def print_config(config: Config):
    print("  Resolved configuration:")
    for key, value in config.to_dict().items():
        print(f"    {key:<20} {value}")
    print()


def _output_stem(image_path: str) -> str:
    return sanitize_stem(file_stem(image_path))


# ============================================================
#  SHARED PIPELINE
# ============================================================

def run_shadow_pipeline(image: np.ndarray, shadow_edges: np.ndarray, config: Config,
                        first_step: int, total_steps: int) -> dict:
    """Superpixels, boundary sets, measures and the shadow solve for one image."""
    step = first_step
    print(f"[{step}/{total_steps}] Segmenting superpixels...")
    seg = segment(image, config.region_size, config.compactness, config.slic_iterations)
    bounds = classify_boundaries(seg, shadow_edges, config.edge_min_pixels,
                                 config.edge_min_fraction, config.lightness_tolerance)
    print(f"  ✓ {seg.n} superpixels, {len(seg.adjacency)} adjacent pairs")
    print(f"  ✓ Boundaries: {len(bounds.shd)} shadow, {len(bounds.lit)} bright, "
          f"{len(bounds.ambiguous)} ambiguous")
    if not bounds.shd:
        print("  ⚠ No shadow boundary superpixels; the shadow mask will likely be empty")

    print()
    print(f"[{step + 1}/{total_steps}] Optimizing shadow values...")
    measures = compute_measures(seg, bounds, config.measure_params())
    shadow_map, weights = optimize_shadows(seg, bounds, measures, lam=config.lam, mu=config.mu,
                                           sigma_clr=config.sigma_clr, eps=config.ridge_eps,
                                           threshold=config.shadow_threshold)
    A, b = assemble_system(weights)
    residual = residual_norm(A, shadow_map.values, b)
    print(f"  ✓ Solved {seg.n} unknowns (residual {residual:.2e})")
    print(f"  ✓ Shadow pixels: {int(shadow_map.mask.sum())}/{shadow_map.mask.size}")
    return {'seg': seg, 'bounds': bounds, 'measures': measures, 'shadow_map': shadow_map,
            'residual': residual}


def write_shadow_outputs(result: dict, stem: str, output_dir: str, config: Config,
                         metrics: dict) -> str:
    seg, shadow_map = result['seg'], result['shadow_map']
    save_binary_png(shadow_map.mask, os.path.join(output_dir, f'{stem}.mask.png'))
    save_soft_png(shadow_map.soft, os.path.join(output_dir, f'{stem}.soft.png'))
    save_label_png(seg.labels, os.path.join(output_dir, f'{stem}.labels.png'))
    write_measures_csv(result['measures'], os.path.join(output_dir, f'{stem}.superpixels.csv'),
                       shadow_map.values)
    boundaries_path = os.path.join(output_dir, f'{stem}.boundaries.json')
    ensure_dir(boundaries_path)
    with open(boundaries_path, 'w') as f:
        json.dump(result['bounds'].to_dict(), f, indent=2, sort_keys=True)
        f.write('\n')
    write_resolved_config(config, os.path.join(output_dir, 'config.resolved.txt'))
    report_path = os.path.join(output_dir, f'{stem}.report.json')
    write_report(metrics, config.to_dict(), report_path)
    return report_path


def _pipeline_metrics(result: dict, gt_mask_path: str, config: Config) -> dict:
    shadow_map = result['shadow_map']
    metrics = {
        'superpixels': result['seg'].n,
        'boundaries': {k: len(v) for k, v in result['bounds'].to_dict().items()},
        'solver_residual': result['residual'],
        'shadow_pixels': int(shadow_map.mask.sum()),
    }
    if gt_mask_path:
        gt = load_binary(gt_mask_path)
        metrics['groundtruth'] = image_metrics(shadow_map.mask, gt, shadow_map.soft,
                                               config.roc_thresholds)
        overall = metrics['groundtruth']['overall_accuracy']
        print(f"  ✓ Pixel accuracy vs groundtruth: {overall:.4f}")
    return metrics


# ============================================================
#  COMMANDS
# ============================================================

def cmd_synth(count: int, output_dir: str, config: Config) -> dict:
    banner("Synthetic Scene Generator")
    print_config(config)

    print(f"[1/2] Rendering {count} scenes...")
    manifest = generate_suite(count, config.seed, output_dir,
                              size=(config.synth_size, config.synth_size), verbose=True)

    print()
    print("[2/2] Writing configuration...")
    write_resolved_config(config, os.path.join(output_dir, 'config.resolved.txt'))
    print(f"  ✓ Generated {os.path.join(output_dir, 'config.resolved.txt')}")

    banner("Synthesis Complete!")
    print(f"  Output directory: {os.path.abspath(output_dir)}")
    print(f"  Scenes:           {len(manifest)}")
    print()
    return {'scenes': len(manifest), 'manifest': manifest}


def cmd_train(data_root: str, model_path: str, config: Config, even_split: bool = False) -> dict:
    banner("Structured Shadow-Edge CNN Training")
    print_config(config)

    print("[1/4] Loading dataset...")
    manifest = load_manifest(data_root)
    if even_split:
        manifest, _ = split_even_odd(manifest)
    for warning in manifest.warnings:
        print(f"  ⚠ {warning['stem']}: {warning['message']}")
    if not manifest.entries:
        raise DatasetError('dataset has no usable images', root=data_root)
    print(f"  ✓ {len(manifest)} images ({manifest.split} split)")

    print()
    print("[2/4] Sampling patches...")
    samples = []
    for i, entry in enumerate(manifest.entries):
        image = load_rgb(entry.image)
        _, gt_edges = load_edge_groundtruth(entry)
        edges = canny(image, config.canny_params())
        patches = sample_patches(image, edges, gt_edges, n_max=config.samples_per_class,
                                 seed=derive_seed(config.seed, i),
                                 dilation_radius=config.dilation_radius,
                                 label_size=config.label_size, image_id=entry.stem)
        if not patches:
            manifest.warnings.append({'level': 'warning', 'stem': entry.stem,
                                      'message': 'no patches sampled'})
            print(f"  ⚠ {entry.stem}: no patches sampled")
        samples.extend(patches)
    if not samples:
        raise DatasetError('no training patches could be sampled', root=data_root)
    positives = sum(1 for s in samples if s.positive)
    print(f"  ✓ {len(samples)} patches ({positives} positive, {len(samples) - positives} negative)")

    print()
    print(f"[3/4] Training for {config.epochs} epochs...")
    stats = compute_normalization(samples)
    normalized = apply_normalization(samples, stats)
    model = init_model(config.seed, config.label_size, config.init_scale)
    model.norm_mean, model.norm_std = stats.mean, stats.std
    trained, curve = sgd_train(model, normalized, config.train_config(), verbose=True)
    accuracy = cell_accuracy(trained, normalized)
    print(f"  ✓ Final loss {curve[-1]:.5f}, training cell accuracy {accuracy:.4f}")

    print()
    print("[4/4] Writing model...")
    save_model(trained, model_path)
    base = os.path.splitext(model_path)[0]
    write_csv(f'{base}.loss.csv', ['epoch', 'loss'], [(i + 1, loss) for i, loss in enumerate(curve)])
    write_warnings(manifest, f'{base}.warnings.jsonl')
    write_resolved_config(config, os.path.join(os.path.dirname(model_path), 'config.resolved.txt'))
    print(f"  ✓ Generated {model_path}")
    print(f"  ✓ Generated {base}.loss.csv")

    banner("Training Complete!")
    print(f"  Model:          {os.path.abspath(model_path)}")
    print(f"  Parameters:     {trained.parameter_count}")
    print(f"  Patches:        {len(samples)}")
    print(f"  Cell accuracy:  {accuracy:.4f}")
    print(f"  Warnings:       {len(manifest.warnings)}")
    print()
    return {'model': trained, 'loss_curve': curve, 'samples': len(samples), 'accuracy': accuracy}


def cmd_detect_edges(model_path: str, image_path: str, output_dir: str, config: Config) -> dict:
    banner("Shadow-Edge Detection")
    print_config(config)
    stem = _output_stem(image_path)

    print("[1/3] Loading model and image...")
    model = load_model(model_path)
    image = load_rgb(image_path)
    print(f"  ✓ {model.label_size}×{model.label_size} output model, image {image.shape[1]}×{image.shape[0]}")

    print()
    print("[2/3] Voting structured predictions...")
    edges = canny(image, config.canny_params())
    edge_map = predict_structured(model, image, edges)
    binary = threshold_edges(edge_map, config.edge_threshold)
    isolated = count_isolated_pixels(binary)
    print(f"  ✓ {int(edges.sum())} Canny pixels, {int(binary.sum())} shadow-edge pixels")
    print(f"  ✓ Isolated single-pixel components: {isolated}")

    print()
    print("[3/3] Writing outputs...")
    save_soft_png(edge_map.prob, os.path.join(output_dir, f'{stem}.edges.soft.png'))
    save_binary_png(binary, os.path.join(output_dir, f'{stem}.edges.png'))
    write_resolved_config(config, os.path.join(output_dir, 'config.resolved.txt'))
    metrics = {
        'canny_pixels': int(edges.sum()),
        'shadow_edge_pixels': int(binary.sum()),
        'isolated_pixels': isolated,
        'label_size': model.label_size,
    }
    write_report(metrics, config.to_dict(), os.path.join(output_dir, f'{stem}.edges.report.json'))
    print(f"  ✓ Generated {os.path.join(output_dir, f'{stem}.edges.png')}")
    print()
    return {'edge_map': edge_map, 'edges': binary, **metrics}


def cmd_detect(model_path: str, image_path: str, output_dir: str, config: Config,
               gt_mask_path: str = None) -> dict:
    banner("Shadow Detection")
    print_config(config)
    stem = _output_stem(image_path)

    print("[1/5] Loading model and image...")
    model = load_model(model_path)
    image = load_rgb(image_path)
    print(f"  ✓ Image {image.shape[1]}×{image.shape[0]}")

    print()
    print("[2/5] Detecting shadow edges...")
    edge_map = predict_structured(model, image, canny(image, config.canny_params()))
    shadow_edges = threshold_edges(edge_map, config.edge_threshold)
    print(f"  ✓ {int(shadow_edges.sum())} shadow-edge pixels")

    print()
    result = run_shadow_pipeline(image, shadow_edges, config, 3, 5)
    metrics = _pipeline_metrics(result, gt_mask_path, config)
    metrics['shadow_edge_pixels'] = int(shadow_edges.sum())

    print()
    print("[5/5] Writing outputs...")
    save_binary_png(shadow_edges, os.path.join(output_dir, f'{stem}.edges.png'))
    report_path = write_shadow_outputs(result, stem, output_dir, config, metrics)
    print(f"  ✓ Generated {report_path}")

    banner("Detection Complete!")
    print(f"  Output directory: {os.path.abspath(output_dir)}")
    print(f"  Shadow pixels:    {metrics['shadow_pixels']}")
    print()
    return {**result, 'metrics': metrics}


def cmd_optimize(image_path: str, edges_path: str, output_dir: str, config: Config,
                 gt_mask_path: str = None) -> dict:
    banner("Shadow Optimization")
    print_config(config)
    stem = _output_stem(image_path)

    print("[1/4] Loading image and shadow edges...")
    image = load_rgb(image_path)
    shadow_edges = load_binary(edges_path)
    print(f"  ✓ Image {image.shape[1]}×{image.shape[0]}, {int(shadow_edges.sum())} edge pixels")

    print()
    result = run_shadow_pipeline(image, shadow_edges, config, 2, 4)
    metrics = _pipeline_metrics(result, gt_mask_path, config)

    print()
    print("[4/4] Writing outputs...")
    report_path = write_shadow_outputs(result, stem, output_dir, config, metrics)
    print(f"  ✓ Generated {report_path}")
    print()
    return {**result, 'metrics': metrics}


def cmd_eval(pred_dir: str, gt_dir: str, output_dir: str, config: Config) -> dict:
    banner("Shadow Detection Evaluation")
    print_config(config)

    print("[1/3] Matching predictions to groundtruth...")
    warnings = []
    pairs = []
    for gt_path in sorted(glob.glob(os.path.join(gt_dir, '*.png'))):
        stem = file_stem(gt_path)
        pred_path = os.path.join(pred_dir, f'{stem}.mask.png')
        if not os.path.isfile(pred_path):
            warnings.append({'level': 'warning', 'stem': stem, 'message': 'no prediction'})
            print(f"  ⚠ {stem}: no prediction")
            continue
        soft_path = os.path.join(pred_dir, f'{stem}.soft.png')
        pairs.append((stem, gt_path, pred_path, soft_path if os.path.isfile(soft_path) else None))
    if not pairs:
        raise DatasetError('no predictions match the groundtruth stems', pred_dir=pred_dir, gt_dir=gt_dir)
    print(f"  ✓ {len(pairs)} matched images")

    print()
    print("[2/3] Scoring...")
    per_image = {}
    pooled_soft, pooled_gt = [], []
    for stem, gt_path, pred_path, soft_path in pairs:
        gt = load_binary(gt_path)
        soft = load_soft16(soft_path) if soft_path else None
        per_image[stem] = image_metrics(load_binary(pred_path), gt, soft, config.roc_thresholds)
        if soft is not None:
            pooled_soft.append(soft.ravel())
            pooled_gt.append(gt.ravel())
        overall = per_image[stem]['overall_accuracy']
        print(f"  ✓ {stem}: accuracy {overall:.4f}")
    summary = aggregate(per_image)

    print()
    print("[3/3] Writing report...")
    metrics = {'per_image': per_image, 'aggregate': summary, 'warnings': warnings}
    if pooled_soft:
        rows, auc = roc_auc(np.concatenate(pooled_soft), np.concatenate(pooled_gt), config.roc_thresholds)
        metrics['pooled_auc'] = auc
        write_roc_csv(rows, os.path.join(output_dir, 'roc.csv'))
    report_path = os.path.join(output_dir, 'eval.report.json')
    write_report(metrics, config.to_dict(), report_path)
    write_resolved_config(config, os.path.join(output_dir, 'config.resolved.txt'))
    print(f"  ✓ Generated {report_path}")

    pooled = summary['pooled']
    banner("Evaluation Complete!")
    print(f"  Images:               {summary['images']}")
    print(f"  Overall accuracy:     {pooled['overall_accuracy']:.4f} (pooled)")
    if pooled['shadow_accuracy'] is not None:
        print(f"  Shadow accuracy:      {pooled['shadow_accuracy']:.4f}")
    if pooled['non_shadow_accuracy'] is not None:
        print(f"  Non-shadow accuracy:  {pooled['non_shadow_accuracy']:.4f}")
    if metrics.get('pooled_auc') is not None:
        print(f"  AUC:                  {metrics['pooled_auc']:.4f}")
    print()
    return metrics


def cmd_gradcheck(config: Config, seeds: int = 10) -> dict:
    banner("Gradient Verification")
    print_config(config)
    errors = []
    for offset in range(seeds):
        seed = config.seed + offset
        rng = np.random.default_rng(seed)
        model = init_model(seed, config.label_size)
        units = config.label_size * config.label_size
        sample = LabeledPatch(x=rng.normal(size=(28, 28, 3)), y=rng.integers(0, 2, size=units))
        err = grad_check(model, sample, seed=seed)
        errors.append(err)
        mark = '✓' if err < GRADCHECK_TOLERANCE else '✗'
        print(f"  {mark} seed {seed}: max relative error {err:.3e}")
    worst = max(errors)
    print()
    print(f"  Max relative error: {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:g})")
    print()
    return {'errors': errors, 'max_error': worst, 'passed': worst < GRADCHECK_TOLERANCE}


# ============================================================
#  ARGUMENTS
# ============================================================

def add_config_arguments(parser: argparse.ArgumentParser):
    group = parser.add_argument_group('configuration (override the --config file)')
    group.add_argument('--config', '-c', default=None, help='flat key = value configuration file')
    for name, kind, default, help_text in config_options():
        shown = str(default).lower() if kind is bool else default
        group.add_argument(
            '--' + name.replace('_', '-'),
            dest=name,
            default=None,
            type=lambda raw, key=name: parse_value(key, raw),
            metavar=kind.__name__.upper(),
            help=f'{help_text} (default: {shown})',
        )


def config_from_args(args: argparse.Namespace) -> Config:
    overrides = {name: getattr(args, name) for name, *_ in config_options()}
    return resolve_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='Detect shadows in single images',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python shadow.py synth --count 20 --output ./synth
  python shadow.py train ./synth --model ./models/scnn.bin --epochs 50
  python shadow.py detect ./models/scnn.bin photo.png --output ./out
  python shadow.py optimize photo.png photo.edges.png --output ./out --gt-mask mask.png
  python shadow.py eval ./out ./synth/masks --output ./eval
  python shadow.py gradcheck --seeds 10
        """,
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    commands = parser.add_subparsers(dest='command', required=True)

    p = commands.add_parser('synth', help='generate a synthetic dataset')
    p.add_argument('--count', '-n', type=int, default=20, help='number of scenes (default: 20)')
    p.add_argument('--output', '-o', default='./synth', help='dataset directory (default: ./synth)')

    p = commands.add_parser('train', help='train the structured CNN')
    p.add_argument('data', help='dataset root with images/, masks/ and optional edges/')
    p.add_argument('--model', '-m', default='./model.scnn', help='model file to write (default: ./model.scnn)')
    p.add_argument('--even-split', action='store_true',
                   help='train on even-indexed images only (odd ones are held out)')

    p = commands.add_parser('detect-edges', help='shadow-edge probabilities for one image')
    p.add_argument('model', help='trained model file')
    p.add_argument('image', help='input image')
    p.add_argument('--output', '-o', default='./output', help='output directory (default: ./output)')

    p = commands.add_parser('detect', help='full shadow detection for one image')
    p.add_argument('model', help='trained model file')
    p.add_argument('image', help='input image')
    p.add_argument('--output', '-o', default='./output', help='output directory (default: ./output)')
    p.add_argument('--gt-mask', default=None, help='groundtruth shadow mask for per-image metrics')

    p = commands.add_parser('optimize', help='shadow mask from a binary shadow-edge map')
    p.add_argument('image', help='input image')
    p.add_argument('edges', help='binary shadow-edge PNG')
    p.add_argument('--output', '-o', default='./output', help='output directory (default: ./output)')
    p.add_argument('--gt-mask', default=None, help='groundtruth shadow mask for per-image metrics')

    p = commands.add_parser('eval', help='score predicted masks against groundtruth masks')
    p.add_argument('pred', help='directory with <stem>.mask.png (and optional <stem>.soft.png)')
    p.add_argument('gt', help='directory with groundtruth <stem>.png masks')
    p.add_argument('--output', '-o', default='./eval', help='report directory (default: ./eval)')

    p = commands.add_parser('gradcheck', help='finite-difference check of the CNN gradients')
    p.add_argument('--seeds', type=int, default=10, help='number of consecutive seeds (default: 10)')

    for sub in commands.choices.values():
        add_config_arguments(sub)
    return parser


def run(argv: list = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
        if args.command == 'synth':
            cmd_synth(args.count, args.output, config)
        elif args.command == 'train':
            cmd_train(args.data, args.model, config, even_split=args.even_split)
        elif args.command == 'detect-edges':
            cmd_detect_edges(args.model, args.image, args.output, config)
        elif args.command == 'detect':
            cmd_detect(args.model, args.image, args.output, config, args.gt_mask)
        elif args.command == 'optimize':
            cmd_optimize(args.image, args.edges, args.output, config, args.gt_mask)
        elif args.command == 'eval':
            cmd_eval(args.pred, args.gt, args.output, config)
        elif args.command == 'gradcheck':
            if not cmd_gradcheck(config, args.seeds)['passed']:
                return 1
    except ShadowKitError as e:
        print(e.one_line(), file=sys.stderr)
        return 2
    except OSError as e:
        text = str(e.strerror or e).replace('"', "'")
        print(f'error code=io_error message="{text}" path={e.filename}', file=sys.stderr)
        return 3
    return 0


def main():
    sys.exit(run())


if __name__ == '__main__':
    main()
