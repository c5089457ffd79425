"""Acceptance suite: one test per criterion, each reported as a PASS/FAIL line at the end of the run.

Run alone with ``pytest tests/test_acceptance.py`` (about 20 minutes on one CPU core, dominated by the
overfit and ablation training runs).
"""

import time

import numpy as np
import pytest
import torch

import oracles
from e2e import pipeline
from metascript.evaluation import ActivationStats, blur_probe, diversity_probe, frechet_distance, inception_score
from metascript.glyphs import load_dataset
from metascript.nets import DenormBlock, DenormLayer, Generator, ModelConfig, MultiScaleDiscriminator
from metascript.nets import StructureEncoder, StyleEncoder
from metascript.objectives import LossWeights, discriminator_loss, generator_loss
from metascript.synth import TOY_CHARACTERS, make_toy_dataset
from metascript.training import RUNS_DIR_ENV, TrainConfig, load_checkpoint, run_ablation, train
from metascript.typewriter import LayoutSpec, compose, layout, tokenize
from test_objectives import oracle_discriminator, oracle_generator, toy_batch

criterion = pytest.mark.criterion


class Clock:
    def __init__(self, limit):
        self.limit = limit

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start
        if exc[0] is None:
            assert self.seconds < self.limit, f"took {self.seconds:.1f} s, limit {self.limit} s"


@criterion("denorm layer matches scalar oracle on 100 instances (< 1e-6, < 10 s)")
def test_denorm_oracle():
    gen = torch.Generator().manual_seed(100)
    torch.manual_seed(100)
    worst = 0.0
    with Clock(10):
        for trial in range(100):
            side = 2 + trial % 3
            channels, alpha_ch, style_dim = 1 + trial % 4, 1 + trial % 3, 2 + trial % 5
            layer = DenormLayer(channels, alpha_ch, style_dim).double()
            gamma = torch.randn(1, channels, side, side, generator=gen).double()
            alpha = torch.randn(1, alpha_ch, side, side, generator=gen).double()
            beta = torch.randn(1, style_dim, generator=gen).double()
            with torch.no_grad():
                got = layer(gamma, alpha, beta)[0].numpy()
            want = oracles.denorm_layer(gamma[0].numpy(), alpha[0].numpy(), beta[0].numpy(),
                                        oracles.denorm_params(layer))
            worst = max(worst, float(np.abs(got - want).max()))
    assert worst < 1e-6


@criterion("losses match scalar oracle on toy 4x4 batches (< 1e-6, < 10 s)")
def test_loss_oracle():
    with Clock(10):
        for seed in range(10):
            b = toy_batch(seed)
            w = LossWeights(adv_g=0.9, cls_g=1.1, str_g=1.2, sty_g=0.8, rec_g=3.0, adv_d=0.7, cls_d=1.3)
            report = generator_loss(b["verdict"], b["pyramids"], b["styles"], b["fake"], b["truth"], b["labels"], w)
            terms, total = oracle_generator(b, w)
            for name, value in terms.items():
                assert abs(float(report.terms[name]) - value) < 1e-6, name
            assert abs(float(report.total) - total) < 1e-6
            report = discriminator_loss(b["verdict_real"], b["verdict"], b["labels"], w)
            terms, total = oracle_discriminator(b, w)
            for name, value in terms.items():
                assert abs(float(report.terms[name]) - value) < 1e-6, name
            assert abs(float(report.total) - total) < 1e-6


def central_difference(f, x, h=1e-5):
    numeric = torch.zeros_like(x)
    with torch.no_grad():
        flat = x.detach().clone().view(-1)
        for k in range(flat.numel()):
            plus, minus = flat.clone(), flat.clone()
            plus[k] += h
            minus[k] -= h
            numeric.view(-1)[k] = (f(plus.view_as(x)) - f(minus.view_as(x))) / (2 * h)
    return numeric


@criterion("analytic gradients match central differences (rel < 1e-3, < 60 s)")
def test_gradient_checks():
    with Clock(60):
        torch.manual_seed(21)
        block = DenormBlock(3, 2, 2, 4).double()
        alpha = torch.randn(1, 2, 2, 2, dtype=torch.float64)
        beta = torch.randn(1, 4, dtype=torch.float64)
        probe = torch.randn(1, 2, 2, 2, dtype=torch.float64)
        gamma = torch.randn(1, 3, 2, 2, dtype=torch.float64, requires_grad=True)

        def through_block(g):
            return (block(g, alpha, beta) * probe).sum()

        (analytic,) = torch.autograd.grad(through_block(gamma), gamma)
        numeric = central_difference(through_block, gamma)
        assert ((analytic - numeric).norm() / analytic.norm()) < 1e-3

        model = ModelConfig(resolution=8, base_channels=2, style_dim=4, references=2)
        g = model.build_generator().double().eval()
        d = model.build_discriminator(3, 2).double().eval()
        for p in list(g.parameters()) + list(d.parameters()):
            p.requires_grad_(False)
        template = torch.rand(2, 1, 8, 8, dtype=torch.float64)
        truth = torch.rand(2, 1, 8, 8, dtype=torch.float64)
        labels = (torch.tensor([0, 2]), torch.tensor([1, 0]))
        with torch.no_grad():
            pyramid = g.encode_structure(template)
            style = g.encode_style(torch.rand(2, 2, 8, 8, dtype=torch.float64))

        def total(theta):
            fake = torch.sigmoid(theta[0] * template + theta[1])
            return generator_loss(d(fake), (g.encode_structure(fake), pyramid),
                                  (g.encode_style_single(fake), style), fake, truth, labels, LossWeights()).total

        theta = torch.tensor([0.8, 0.3], dtype=torch.float64, requires_grad=True)
        (analytic,) = torch.autograd.grad(total(theta), theta)
        numeric = central_difference(total, theta)
        assert ((analytic - numeric).abs() / analytic.abs()).max() < 1e-3


@criterion("shape suite: pyramid 2..128, style 512, critic sides 128/64/32, output in [0,1] (< 30 s)")
def test_shape_suite():
    with Clock(30), torch.no_grad():
        torch.manual_seed(31)
        template = torch.rand(1, 1, 128, 128)
        refs = torch.rand(1, 4, 128, 128)
        sides = [m.shape[-1] for m in StructureEncoder(128, 64)(template)]
        assert sides == [2, 4, 8, 16, 32, 64, 128]
        assert StyleEncoder(4, 64, 512, 128).eval()(refs).shape == (1, 512)
        d = MultiScaleDiscriminator(10, 3, 128, 64).eval()
        seen = []
        for block in d.blocks:
            block.register_forward_pre_hook(lambda m, args: seen.append(args[0].shape[-1]))
        d(template)
        assert seen == [128, 64, 32]
        out = Generator(128, 64, 512, 4).eval()(refs, template)
        assert out.shape == (1, 1, 128, 128)
        assert 0.0 <= float(out.min()) and float(out.max()) <= 1.0


@criterion("overfit smoke: final L_rec < 50% of iteration 50, D accuracy in (0.55, 0.99) (< 15 min)")
def test_overfit_smoke(tmp_path):
    with Clock(15 * 60):
        info = make_toy_dataset(tmp_path / "data", "十口田木天", 2, resolution=32)
        config = TrainConfig(dataset_root=str(info["root"]), name="overfit", profile="desk", references=2,
                             batch_size=8, iterations=2000, checkpoint_every=2000, seed=0,
                             runs_dir=str(tmp_path / "runs"))
        history = train(config).history
    rec_50 = history[49]["g_rec"]
    rec_final = float(np.mean([r["g_rec"] for r in history[-20:]]))
    accuracy = float(np.mean([r["d_accuracy"] for r in history[-200:]]))
    print(f"L_rec@50={rec_50:.4f} final={rec_final:.4f} D accuracy={accuracy:.3f}")
    assert rec_final < 0.5 * rec_50
    assert 0.55 < accuracy < 0.99


ABLATION_ITERATIONS = 1500


@pytest.fixture(scope="module")
def ablation(tmp_path_factory):
    root = tmp_path_factory.mktemp("ablation")
    info = make_toy_dataset(root / "data", "".join(list(TOY_CHARACTERS)[:16]), 2, resolution=32)
    index = load_dataset(info["root"], 32)
    base = TrainConfig(dataset_root=str(info["root"]), name="abl", profile="desk", references=2, batch_size=8,
                       iterations=ABLATION_ITERATIONS, checkpoint_every=ABLATION_ITERATIONS, seed=0,
                       runs_dir=str(root / "runs"))
    refs = np.stack([index.script(cp, index.writers[0]) for cp in index.characters[:2]])
    templates = np.stack([index.prototype(cp) for cp in index.characters])

    def probe(path, config):
        g = load_checkpoint(path, with_discriminator=False).generator
        with torch.no_grad():
            out = g(torch.from_numpy(np.repeat(refs[None], len(templates), 0)), torch.from_numpy(templates[:, None]))
        out = out.numpy()[:, 0]
        return {"diversity": diversity_probe(out), "blur": blur_probe(out),
                "to_prototype": float(np.abs(out - templates).mean())}

    rows = run_ablation(base, [{}, {"remove": "adv"}, {"remove": "cls"}], index=index, evaluate=probe)
    return {r["label"]: r for r in rows}


@criterion("ablation: removing L_adv blurs outputs toward the prototype")
def test_ablation_without_adversarial_loss(ablation):
    base, no_adv = ablation["w/ L_all"], ablation["w/o L_adv"]
    print({k: (round(base[k], 4), round(no_adv[k], 4)) for k in ("blur", "diversity", "to_prototype")})
    assert no_adv["blur"] > base["blur"]
    assert no_adv["to_prototype"] < base["to_prototype"]


@criterion("ablation: removing L_cls collapses diversity below 25% of baseline")
def test_ablation_without_classification_loss(ablation):
    base, no_cls = ablation["w/ L_all"], ablation["w/o L_cls"]
    print(f"diversity baseline={base['diversity']:.4f} w/o L_cls={no_cls['diversity']:.4f}")
    assert no_cls["diversity"] < 0.25 * base["diversity"]


@criterion("metric units: FID identity/shift/symmetry, IS uniform and one-hot")
def test_metric_units():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(4, 4))
    s = ActivationStats(rng.normal(size=4), a @ a.T + 0.1 * np.eye(4), 50)
    assert abs(frechet_distance(s, s)) < 1e-6
    one = np.array([[1.0]])
    assert frechet_distance(ActivationStats(np.array([0.0]), one, 2), ActivationStats(np.array([3.0]), one, 2)) == 9.0
    b = rng.normal(size=(4, 4))
    t = ActivationStats(rng.normal(size=4), b @ b.T + 0.1 * np.eye(4), 50)
    assert abs(frechet_distance(s, t) - frechet_distance(t, s)) < 1e-6
    n = 6
    assert abs(inception_score(np.full((12, n), 1.0 / n)) - 1.0) < 1e-12
    assert abs(inception_score(np.eye(n)) - n) < 1e-9


@criterion("typewriter: bit-identical golden page, 20 randomized line counts (< 60 s)")
def test_typewriter_golden(desk_run, toy_index, toy_font):
    _, result = desk_run
    refs = np.stack([toy_index.script(cp, toy_index.writers[0]) for cp in toy_index.characters[:2]])
    spec = LayoutSpec(size_c=24, width_l=150, margin=10, seed=11)
    text = "十口田，木天王。\n王天 木田口十"
    with Clock(60):
        pages = []
        for _ in range(2):
            g = load_checkpoint(result.checkpoint, with_discriminator=False).generator
            pages.append(compose(refs, text, spec, g, toy_font).image)
        assert np.array_equal(pages[0], pages[1])
        gen = np.random.default_rng(20)
        for _ in range(20):
            size = int(gen.integers(4, 64))
            width = int(gen.integers(size, 20 * size))
            k = int(gen.integers(1, 100))
            plan = layout(tokenize("口" * k), LayoutSpec(size_c=size, width_l=width))
            assert plan.lines == oracles.lines_for(k, size, width)


@criterion("end-to-end CLI smoke: import, train, eval, compose all exit 0 (< 20 min)")
def test_cli_end_to_end(tmp_path, monkeypatch):
    monkeypatch.setenv(RUNS_DIR_ENV, str(tmp_path / "runs"))
    with Clock(20 * 60):
        result = pipeline(tmp_path)
    assert result["checkpoint"].exists()
    assert np.array_equal(*result["pages"])
