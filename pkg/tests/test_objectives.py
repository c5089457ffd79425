import math

import numpy as np
import pytest
import torch

import oracles
from metascript.nets import ModelConfig, ScaleVerdict
from metascript.objectives import (
    LossWeights,
    NonFiniteLossError,
    adversarial_real,
    classification,
    discriminator_loss,
    generator_loss,
    reconstruction,
)


def toy_batch(seed, batch=3, n=5, m=4, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)

    def r(*shape, scale=1.0):
        return (scale * torch.randn(*shape, generator=g)).to(dtype)

    verdicts = [ScaleVerdict(r(batch, scale=3), r(batch, n, scale=2), r(batch, m, scale=2)) for _ in range(3)]
    return {
        "verdict": verdicts,
        "verdict_real": [ScaleVerdict(r(batch, scale=3), r(batch, n), r(batch, m)) for _ in range(3)],
        "pyramids": ([r(batch, 2, 2, 2), r(batch, 3, 4, 4)], [r(batch, 2, 2, 2), r(batch, 3, 4, 4)]),
        "styles": (r(batch, 6), r(batch, 6)),
        "fake": torch.rand(batch, 1, 4, 4, generator=g).to(dtype),
        "truth": torch.rand(batch, 1, 4, 4, generator=g).to(dtype),
        "labels": (torch.randint(0, n, (batch,), generator=g), torch.randint(0, m, (batch,), generator=g)),
    }


def _lists(verdicts):
    return [(v.authenticity.tolist(), v.types.tolist(), v.writers.tolist()) for v in verdicts]


def oracle_generator(b, w: LossWeights):
    types, writers = (t.tolist() for t in b["labels"])
    terms = {
        "adv": oracles.adv_real(_lists(b["verdict"])),
        "cls": oracles.cls(_lists(b["verdict"]), types, writers),
        "str": oracles.structure(*[[x.numpy() for x in p] for p in b["pyramids"]]),
        "sty": oracles.style(*[s.tolist() for s in b["styles"]]),
        "rec": oracles.reconstruction(b["fake"].numpy(), b["truth"].numpy()),
    }
    total = (w.adv_g * terms["adv"] + w.cls_g * terms["cls"] + w.str_g * terms["str"]
             + w.sty_g * terms["sty"] + w.rec_g * terms["rec"])
    return terms, total


def oracle_discriminator(b, w: LossWeights):
    types, writers = (t.tolist() for t in b["labels"])
    real, fake = _lists(b["verdict_real"]), _lists(b["verdict"])
    terms = {
        "adv": oracles.adv_real(real) + oracles.adv_fake(fake),
        "cls": oracles.cls(real, types, writers) + oracles.cls(fake, types, writers),
    }
    return terms, w.adv_d * terms["adv"] + w.cls_d * terms["cls"]


@pytest.mark.parametrize("seed", range(5))
def test_generator_loss_matches_scalar_oracle(seed):
    b = toy_batch(seed)
    w = LossWeights()
    report = generator_loss(b["verdict"], b["pyramids"], b["styles"], b["fake"], b["truth"], b["labels"], w)
    terms, total = oracle_generator(b, w)
    for name, value in terms.items():
        assert abs(float(report.terms[name]) - value) < 1e-6, name
    assert abs(float(report.total) - total) < 1e-6


@pytest.mark.parametrize("seed", range(5))
def test_discriminator_loss_matches_scalar_oracle(seed):
    b = toy_batch(seed)
    w = LossWeights(adv_d=0.7, cls_d=1.3)
    report = discriminator_loss(b["verdict_real"], b["verdict"], b["labels"], w)
    terms, total = oracle_discriminator(b, w)
    for name, value in terms.items():
        assert abs(float(report.terms[name]) - value) < 1e-6, name
    assert abs(float(report.total) - total) < 1e-6


def test_identical_images_zero_the_matching_terms():
    b = toy_batch(0)
    p = b["pyramids"][0]
    s = b["styles"][0]
    report = generator_loss(b["verdict"], (p, p), (s, s), b["truth"], b["truth"], b["labels"], LossWeights())
    for name in ("rec", "str", "sty"):
        assert float(report.terms[name]) == 0.0


def test_analytic_limits():
    half = [ScaleVerdict(torch.zeros(4), torch.zeros(4, 7), torch.zeros(4, 3)) for _ in range(3)]
    assert math.isclose(float(adversarial_real(half)), 3 * math.log(2), rel_tol=1e-6)
    labels = (torch.arange(4) % 7, torch.arange(4) % 3)
    assert math.isclose(float(classification(half, *labels)), 3 * (math.log(7) + math.log(3)), rel_tol=1e-6)

    real = [ScaleVerdict(torch.full((4,), 60.0), torch.zeros(4, 7), torch.zeros(4, 3)) for _ in range(3)]
    fake = [ScaleVerdict(torch.full((4,), -60.0), torch.zeros(4, 7), torch.zeros(4, 3)) for _ in range(3)]
    report = discriminator_loss(real, fake, labels, LossWeights())
    assert float(report.terms["adv"]) < 1e-20


def test_extreme_logits_stay_finite():
    big = [ScaleVerdict(torch.tensor([1e4, -1e4]), torch.tensor([[1e4, -1e4]] * 2), torch.tensor([[0.0, 1e4]] * 2))
           for _ in range(3)]
    labels = (torch.tensor([1, 0]), torch.tensor([0, 1]))
    report = discriminator_loss(big, big, labels, LossWeights())
    assert math.isfinite(float(report.total))


def test_total_is_weighted_sum_and_zero_weight_excludes_term():
    b = toy_batch(1, dtype=torch.float32)
    w = LossWeights(adv_g=0.3, cls_g=0.0, str_g=2.0, sty_g=0.25, rec_g=7.0)
    report = generator_loss(b["verdict"], b["pyramids"], b["styles"], b["fake"], b["truth"], b["labels"], w)
    d = report.as_dict()
    expected = 0.3 * d["adv"] + 2.0 * d["str"] + 0.25 * d["sty"] + 7.0 * d["rec"]
    assert abs(d["total"] - expected) < 1e-5
    assert d["cls"] > 0


def test_zero_weight_removes_gradient_contribution():
    b = toy_batch(2)
    types = b["verdict"]
    leaves = [v.types.clone().requires_grad_(True) for v in types]
    verdict = [ScaleVerdict(v.authenticity, t, v.writers) for v, t in zip(types, leaves)]
    fake = b["fake"].clone().requires_grad_(True)
    w = LossWeights().without("cls")
    report = generator_loss(verdict, b["pyramids"], b["styles"], fake, b["truth"], b["labels"], w)
    report.total.backward()
    assert all(t.grad is None or t.grad.abs().max() == 0 for t in leaves)
    assert fake.grad.norm() > 0

    report = generator_loss(verdict, b["pyramids"], b["styles"], b["fake"], b["truth"], b["labels"], LossWeights())
    report.total.backward()
    assert all(t.grad.norm() > 0 for t in leaves)


def test_nan_term_is_named():
    b = toy_batch(3)
    fake = b["fake"].clone()
    fake[0, 0, 0, 0] = float("nan")
    with pytest.raises(NonFiniteLossError, match="rec") as info:
        generator_loss(b["verdict"], b["pyramids"], b["styles"], fake, b["truth"], b["labels"], LossWeights())
    assert info.value.term == "rec"


def test_weights_validate_and_remove_terms():
    with pytest.raises(ValueError):
        LossWeights(rec_g=-1.0)
    with pytest.raises(ValueError):
        LossWeights(adv_g=float("inf"))
    w = LossWeights().without("adv")
    assert w.adv_g == 0 and w.adv_d == 0 and w.cls_g == 1
    with pytest.raises(ValueError):
        LossWeights().without("nope")


def test_reconstruction_is_translation_sensitive(toy_index):
    glyph = torch.from_numpy(np.array(toy_index.script(toy_index.characters[0], toy_index.writers[0])))[None, None]
    shifted = torch.roll(glyph, shifts=1, dims=-1)
    assert float(reconstruction(glyph, glyph)) == 0.0
    assert float(reconstruction(shifted, glyph)) > 0.0


def test_total_generator_loss_gradient_on_two_parameter_probe():
    """fake = sigmoid(p0 * template + p1) through frozen real networks, float64."""
    torch.manual_seed(11)
    model = ModelConfig(resolution=8, base_channels=2, style_dim=4, references=2)
    g = model.build_generator().double().eval()
    d = model.build_discriminator(3, 2).double().eval()
    for p in list(g.parameters()) + list(d.parameters()):
        p.requires_grad_(False)
    template = torch.rand(2, 1, 8, 8, dtype=torch.float64)
    truth = torch.rand(2, 1, 8, 8, dtype=torch.float64)
    refs = torch.rand(2, 2, 8, 8, dtype=torch.float64)
    labels = (torch.tensor([0, 2]), torch.tensor([1, 0]))
    with torch.no_grad():
        template_pyramid = g.encode_structure(template)
        ref_style = g.encode_style(refs)

    def total(theta):
        fake = torch.sigmoid(theta[0] * template + theta[1])
        report = generator_loss(
            d(fake),
            (g.encode_structure(fake), template_pyramid),
            (g.encode_style_single(fake), ref_style),
            fake,
            truth,
            labels,
            LossWeights(),
        )
        return report.total

    theta = torch.tensor([1.3, -0.4], dtype=torch.float64, requires_grad=True)
    (analytic,) = torch.autograd.grad(total(theta), theta)
    h = 1e-5
    numeric = torch.zeros(2, dtype=torch.float64)
    with torch.no_grad():
        for k in range(2):
            e = torch.zeros(2, dtype=torch.float64)
            e[k] = h
            numeric[k] = (total(theta + e) - total(theta - e)) / (2 * h)
    rel = ((analytic - numeric).abs() / analytic.abs().clamp_min(1e-12)).max()
    assert rel < 1e-3
