import json
import os

import numpy as np
import pytest

from shadow import run
from shadowkit.cnn import init_model
from shadowkit.evalmetrics import load_report
from shadowkit.modelfile import load_model, save_model
from shadowkit.synthgen import Occluder, SceneSpec, generate_scene
from shadowkit.utils import load_soft16, save_binary_png, save_rgb


def _synth(tmp_path, name='synth', count=1, seed=7):
    out = tmp_path / name
    assert run(['synth', '--count', str(count), '--output', str(out), '--seed', str(seed)]) == 0
    return out


def test_synth_is_byte_reproducible(tmp_path):
    a = _synth(tmp_path, 'a')
    b = _synth(tmp_path, 'b')
    for rel in ('images/scene_0000.png', 'masks/scene_0000.png', 'edges/scene_0000.png',
                'scenes.jsonl', 'config.resolved.txt'):
        assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_missing_input_is_an_io_error(tmp_path, capsys):
    code = run(['optimize', str(tmp_path / 'nope.png'), str(tmp_path / 'nope.edges.png'),
                '--output', str(tmp_path / 'out')])
    assert code == 3
    assert capsys.readouterr().err.startswith('error code=io_error')


def test_unknown_config_key_is_reported_on_one_line(tmp_path, capsys):
    cfg = tmp_path / 'run.cfg'
    cfg.write_text('no_such_option = 3\n')
    code = run(['gradcheck', '--config', str(cfg)])
    err = capsys.readouterr().err
    assert code == 2
    assert err.startswith('error code=config_invalid')
    assert len(err.strip().splitlines()) == 1


def test_gradcheck_passes_and_logs_its_configuration(capsys):
    assert run(['gradcheck', '--seeds', '2']) == 0
    out = capsys.readouterr().out
    assert 'Resolved configuration:' in out
    assert out.count('max relative error') == 2


def test_train_smoke(tmp_path):
    data = _synth(tmp_path, count=2)
    model_path = tmp_path / 'models' / 'scnn.bin'
    code = run(['train', str(data), '--model', str(model_path), '--samples-per-class', '5',
                '--epochs', '1', '--batch-size', '4'])
    assert code == 0
    model = load_model(str(model_path))
    assert model.label_size == 5
    assert np.all(model.norm_std > 0)
    assert len((tmp_path / 'models' / 'scnn.loss.csv').read_text().splitlines()) == 2
    assert (tmp_path / 'models' / 'config.resolved.txt').is_file()


def test_detect_writes_mask_and_report(tmp_path):
    data = _synth(tmp_path)
    model_path = tmp_path / 'flat.scnn'
    save_model(init_model(0, init_scale=0.0), str(model_path))
    out = tmp_path / 'out'
    code = run(['detect', str(model_path), str(data / 'images' / 'scene_0000.png'),
                '--output', str(out), '--gt-mask', str(data / 'masks' / 'scene_0000.png')])
    assert code == 0
    for suffix in ('mask.png', 'soft.png', 'labels.png', 'edges.png', 'superpixels.csv',
                   'boundaries.json', 'report.json'):
        assert (out / f'scene_0000.{suffix}').is_file()
    report = load_report(str(out / 'scene_0000.report.json'))
    assert report['config']['seed'] == 0
    assert report['metrics']['solver_residual'] < 1e-8
    assert 0.0 <= report['metrics']['groundtruth']['overall_accuracy'] <= 1.0
    boundaries = json.loads((out / 'scene_0000.boundaries.json').read_text())
    assert set(boundaries) == {'ambiguous', 'lit', 'shd'}


def test_detect_edges_outputs(tmp_path):
    data = _synth(tmp_path)
    model_path = tmp_path / 'flat.scnn'
    save_model(init_model(0, init_scale=0.0), str(model_path))
    out = tmp_path / 'edges'
    assert run(['detect-edges', str(model_path), str(data / 'images' / 'scene_0000.png'),
                '--output', str(out)]) == 0
    soft = load_soft16(str(out / 'scene_0000.edges.soft.png'))
    assert set(np.unique(np.round(soft, 3))) <= {0.0, 0.5}
    report = load_report(str(out / 'scene_0000.edges.report.json'))
    assert report['metrics']['label_size'] == 5


def _oracle_scene(tmp_path):
    spec = SceneSpec(
        size=(128, 128),
        occluders=[Occluder('disc', [(60, 60)], 22)],
        light_offset=(18, 14),
        attenuation=0.45,
        background=(200, 200, 200),
        object_color=(225, 225, 225),
        noise_std=2.0,
    )
    image, mask, edges = generate_scene(spec, seed=3)
    paths = {name: str(tmp_path / f'{name}.png') for name in ('scene', 'edges', 'mask')}
    save_rgb(image, paths['scene'])
    save_binary_png(edges, paths['edges'])
    save_binary_png(mask, paths['mask'])
    return paths, mask


@pytest.mark.slow
def test_optimize_with_groundtruth_edges_on_a_synthetic_suite(tmp_path):
    data = _synth(tmp_path, count=20, seed=0)
    out = tmp_path / 'out'
    accuracies = []
    for image_path in sorted((data / 'images').glob('*.png')):
        stem = image_path.stem
        assert run(['optimize', str(image_path), str(data / 'edges' / f'{stem}.png'),
                    '--output', str(out), '--gt-mask', str(data / 'masks' / f'{stem}.png')]) == 0
        report = load_report(str(out / f'{stem}.report.json'))
        accuracies.append(report['metrics']['groundtruth']['overall_accuracy'])
    assert len(accuracies) == 20
    assert np.mean(accuracies) >= 0.95


@pytest.mark.slow
def test_optimize_soft_map_is_higher_inside_the_shadow(tmp_path):
    paths, mask = _oracle_scene(tmp_path)
    out = tmp_path / 'out'
    assert run(['optimize', paths['scene'], paths['edges'], '--output', str(out),
                '--gt-mask', paths['mask']]) == 0
    soft = load_soft16(str(out / 'scene.soft.png'))
    assert soft[mask].mean() > soft[~mask].mean()
    report = load_report(str(out / 'scene.report.json'))
    assert report['metrics']['solver_residual'] < 1e-8


def test_eval_scores_matched_stems(tmp_path):
    gt_dir = tmp_path / 'gt'
    pred_dir = tmp_path / 'pred'
    gt = np.zeros((16, 16), dtype=bool)
    gt[:8] = True
    save_binary_png(gt, str(gt_dir / 'a.png'))
    save_binary_png(gt, str(gt_dir / 'b.png'))
    save_binary_png(gt, str(pred_dir / 'a.mask.png'))
    out = tmp_path / 'eval'
    assert run(['eval', str(pred_dir), str(gt_dir), '--output', str(out)]) == 0
    report = load_report(str(out / 'eval.report.json'))
    assert report['metrics']['aggregate']['images'] == 1
    assert report['metrics']['per_image']['a']['overall_accuracy'] == 1.0
    assert [w['stem'] for w in report['metrics']['warnings']] == ['b']
    assert not os.path.exists(out / 'roc.csv')


@pytest.mark.slow
@pytest.mark.acceptance
def test_trained_models_on_held_out_scenes(tmp_path):
    train_dir = _synth(tmp_path, 'train', count=15, seed=0)
    held_out = _synth(tmp_path, 'held_out', count=5, seed=1)
    models = {}
    for size in (5, 1):
        models[size] = tmp_path / f'scnn{size}.bin'
        assert run(['train', str(train_dir), '--model', str(models[size]), '--label-size', str(size),
                    '--samples-per-class', '100', '--epochs', '100']) == 0

    accuracies, aucs = [], []
    isolated = {5: [], 1: []}
    for image_path in sorted((held_out / 'images').glob('*.png')):
        stem = image_path.stem
        out = tmp_path / 'detect'
        assert run(['detect', str(models[5]), str(image_path), '--output', str(out),
                    '--gt-mask', str(held_out / 'masks' / f'{stem}.png')]) == 0
        scores = load_report(str(out / f'{stem}.report.json'))['metrics']['groundtruth']
        accuracies.append(scores['overall_accuracy'])
        if scores['auc'] is not None:
            aucs.append(scores['auc'])
        for size, path in models.items():
            edges_out = tmp_path / f'edges{size}'
            assert run(['detect-edges', str(path), str(image_path), '--output', str(edges_out)]) == 0
            report = load_report(str(edges_out / f'{stem}.edges.report.json'))
            isolated[size].append(report['metrics']['isolated_pixels'])

    assert np.mean(accuracies) >= 0.90
    assert np.mean(aucs) >= 0.95
    assert np.median(isolated[5]) < np.median(isolated[1])
