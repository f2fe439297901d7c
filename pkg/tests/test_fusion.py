import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from charcom.backbone import FeatureFrame
from charcom.fusion import (
    ConditionProjector,
    EmbedderPair,
    FusionCoefficients,
    MissingAdapterError,
    RefEmbedder,
    TextEmbedder,
    build_plan,
    cosine,
    empty_plan,
    logistic,
    plan_to_updates,
    relevance_weight,
    static_plan,
)
from charcom.lowrank import make_lowrank
from charcom.prompts import CharacterCard, SceneSpec, compile_prompt
from charcom.trainer import AdapterWeights


def make_card(cid, trigger, attributes, d_feat=16):
    rng = np.random.default_rng(abs(hash(cid)) % 2**32)
    anchor = rng.normal(size=d_feat)
    anchor /= np.linalg.norm(anchor)
    frames = tuple(
        FeatureFrame(values=anchor + 0.05 * rng.standard_normal(d_feat))
        for _ in range(3)
    )
    return CharacterCard(character_id=cid, trigger=trigger,
                         attributes=attributes, reference_set=frames,
                         anchor=anchor)


@pytest.fixture
def embedders():
    return EmbedderPair.default(256)


@pytest.fixture
def coeffs():
    return FusionCoefficients()


def test_embed_text_deterministic(embedders):
    t = "copper fox cub amber eyes"
    np.testing.assert_array_equal(
        embedders.text.embed(t), embedders.text.embed(t)
    )


def test_embed_text_order_free(embedders):
    a = embedders.text.embed("red fox")
    b = embedders.text.embed("fox red")
    assert cosine(a, b) == pytest.approx(1.0)


def test_embed_text_empty_is_zero(embedders):
    assert np.linalg.norm(embedders.text.embed("")) == 0.0


def test_embed_text_unit_norm(embedders):
    assert np.linalg.norm(embedders.text.embed("a few plain words")) == \
        pytest.approx(1.0)


def test_disjoint_texts_near_orthogonal(embedders):
    # Empirical collision measurement for the signed hashing scheme at
    # dim 256.  Aligned-collision tails make the absolute max heavy-tailed,
    # so the assertion is on the distribution over 100 pairs.
    rng = np.random.default_rng(200)
    sims = []
    for _ in range(100):
        va = [f"alpha{rng.integers(1_000_000)}" for _ in range(15)]
        vb = [f"beta{rng.integers(1_000_000)}" for _ in range(15)]
        sims.append(abs(cosine(embedders.text.embed(" ".join(va)),
                               embedders.text.embed(" ".join(vb)))))
    sims = np.array(sims)
    assert np.quantile(sims, 0.95) < 0.2
    assert sims.mean() < 0.06


def test_ref_embedder_set_is_normalized_mean():
    ref = RefEmbedder(dimension=8)
    frames = [FeatureFrame(values=np.array([1.0, 0.0, 0.0, 0.0])),
              FeatureFrame(values=np.array([0.0, 1.0, 0.0, 0.0]))]
    per_frame = [ref.embed_frame(f) for f in frames]
    mean = np.mean(per_frame, axis=0)
    expected = mean / np.linalg.norm(mean)
    np.testing.assert_allclose(ref.embed_set(frames), expected)


def test_relevance_weight_formula_against_scalar_oracle(coeffs, embedders):
    # sigma(alpha * cos_t + beta * cos_r) recomputed from raw cosines.
    card = make_card("fox", "foxtrig", "copper fox cub amber eyes cream patch")
    prompt = "foxtrig copper fox cub amber eyes cream patch explores the orchard"
    p = embedders.text.embed(prompt)
    cos_t = cosine(p, embedders.text.embed(card.attributes))
    cos_r = cosine(p, embedders.reference.embed_set(card.reference_set))
    expected = 1.0 / (1.0 + math.exp(-(coeffs.alpha * cos_t + coeffs.beta * cos_r)))
    got = relevance_weight(prompt, card, coeffs, embedders)
    assert got == pytest.approx(expected, abs=1e-12)


def test_logistic_at_two():
    assert logistic(2.0) == pytest.approx(0.8807970779778823, abs=1e-12)


def test_relevance_weight_neutral_is_half():
    # Two zero cosines: empty prompt gives zero evidence on both channels.
    card = make_card("owl", "owltrig", "snow owl silver feathers")
    w = relevance_weight("", card, FusionCoefficients(), EmbedderPair.default())
    assert w == pytest.approx(0.5)


def test_relevance_weight_rejects_empty_refs():
    card = CharacterCard(
        character_id="x", trigger="t", attributes="some words",
        reference_set=(), anchor=np.ones(4),
    )
    with pytest.raises(ValueError):
        relevance_weight("prompt", card, FusionCoefficients(), EmbedderPair.default())


@given(
    cos_t=st.floats(min_value=-1, max_value=1),
    cos_r=st.floats(min_value=-1, max_value=1),
    alpha=st.floats(min_value=0.1, max_value=4),
    beta=st.floats(min_value=0.1, max_value=4),
)
def test_logistic_weight_stays_in_open_interval(cos_t, cos_r, alpha, beta):
    w = logistic(alpha * cos_t + beta * cos_r)
    assert 0.0 < w < 1.0


@settings(max_examples=50)
@given(
    base=st.floats(min_value=-0.9, max_value=0.9),
    bump=st.floats(min_value=0.01, max_value=0.1),
)
def test_weight_monotone_in_cosine(base, bump):
    assert logistic(base + bump) > logistic(base)


def test_scaling_coefficients_preserves_ranking():
    pairs = [(0.8, 0.1), (0.3, 0.2), (-0.2, 0.5)]
    for k in (0.5, 2.0, 7.0):
        ranks = sorted(range(3), key=lambda i: logistic(pairs[i][0] + pairs[i][1]))
        scaled = sorted(range(3), key=lambda i: logistic(k * pairs[i][0] + k * pairs[i][1]))
        assert ranks == scaled


def build_two_card_registry():
    a = make_card("aria", "ariatrig",
                  "copper fox cub, amber eyes, cream chest patch, bushy tail")
    b = make_card("bosk", "bosktrig",
                  "elderly snow owl, silver feathers, brass spectacles, worn satchel")
    return [a, b]


def test_build_plan_threshold_zero_selects_all(embedders):
    registry = build_two_card_registry()
    scene = SceneSpec(action="ariatrig explores the orchard", style="", cast=("aria",))
    prompt = compile_prompt(scene, registry)
    plan = build_plan(prompt, registry,
                      FusionCoefficients(weight_threshold=0.0), embedders)
    assert len(plan.selected) == 2
    assert not plan.excluded


def test_build_plan_threshold_one_selects_none(embedders):
    registry = build_two_card_registry()
    scene = SceneSpec(action="ariatrig explores the orchard", style="", cast=("aria",))
    prompt = compile_prompt(scene, registry)
    plan = build_plan(prompt, registry,
                      FusionCoefficients(weight_threshold=1.0), embedders)
    assert not plan.selected
    assert len(plan.excluded) == 2


def test_build_plan_selects_cast_excludes_other(embedders, coeffs):
    registry = build_two_card_registry()
    scene = SceneSpec(action="ariatrig explores the sunlit orchard",
                      style="storybook watercolor", cast=("aria",))
    prompt = compile_prompt(scene, registry)
    # Oracle: recompute both weights directly.
    w_aria = relevance_weight(prompt.text, registry[0], coeffs, embedders)
    w_bosk = relevance_weight(prompt.text, registry[1], coeffs, embedders)
    assert w_aria >= 0.6 > w_bosk
    plan = build_plan(prompt, registry, coeffs, embedders)
    assert [c for c, _ in plan.selected] == ["aria"]
    assert [c for c, _, _ in plan.excluded] == ["bosk"]
    assert plan.excluded[0][1] == pytest.approx(w_bosk)


def test_build_plan_deterministic(embedders, coeffs):
    registry = build_two_card_registry()
    scene = SceneSpec(action="bosktrig rests", style="", cast=("bosk",))
    prompt = compile_prompt(scene, registry)
    p1 = build_plan(prompt, registry, coeffs, embedders)
    p2 = build_plan(prompt, registry, coeffs, embedders)
    assert p1 == p2


def make_adapter(cid, seed):
    layers = tuple(make_lowrank(8, 8, 2, seed=seed + i) for i in range(2))
    return AdapterWeights(character_id=cid, layers=layers, rank=2)


def test_plan_to_updates_empty_plan():
    scene_prompt = compile_prompt(
        SceneSpec(action="quiet field", style="", cast=()), []
    )
    sets = plan_to_updates(empty_plan(scene_prompt), {})
    assert all(len(s) == 0 for s in sets)


def test_plan_to_updates_orders_by_id():
    registry = build_two_card_registry()
    prompt = compile_prompt(
        SceneSpec(action="together", style="", cast=("aria", "bosk")), registry
    )
    plan = static_plan(prompt, registry)
    adapters = {"aria": make_adapter("aria", 1), "bosk": make_adapter("bosk", 5)}
    sets = plan_to_updates(plan, adapters)
    assert len(sets) == 2
    for layer_idx, layer_set in enumerate(sets):
        assert [w for _, w in layer_set] == [1.0, 1.0]
        assert layer_set[0][0] is adapters["aria"].layers[layer_idx]
        assert layer_set[1][0] is adapters["bosk"].layers[layer_idx]


def test_plan_to_updates_weights_carried():
    registry = build_two_card_registry()
    prompt = compile_prompt(
        SceneSpec(action="pair", style="", cast=("aria", "bosk")), registry
    )
    from charcom.fusion import FusionPlan
    plan = FusionPlan(prompt_id=prompt.prompt_id,
                      selected=(("bosk", 0.7), ("aria", 0.8)), excluded=())
    adapters = {"aria": make_adapter("aria", 2), "bosk": make_adapter("bosk", 3)}
    sets = plan_to_updates(plan, adapters)
    assert [w for _, w in sets[0]] == [0.8, 0.7]  # id order: aria first


def test_plan_to_updates_missing_adapter_named():
    prompt = compile_prompt(
        SceneSpec(action="x", style="", cast=()), []
    )
    from charcom.fusion import FusionPlan
    plan = FusionPlan(prompt_id=prompt.prompt_id, selected=(("ghost", 0.9),),
                      excluded=())
    with pytest.raises(MissingAdapterError, match="ghost"):
        plan_to_updates(plan, {})


def test_condition_projector_deterministic_unit():
    proj = ConditionProjector.create(dim_in=256, d_cond=16)
    e = TextEmbedder(256).embed("lantern village square")
    c1 = proj.condition(e)
    c2 = ConditionProjector.create(dim_in=256, d_cond=16).condition(e)
    np.testing.assert_array_equal(c1, c2)
    assert np.linalg.norm(c1) == pytest.approx(1.0)
    assert c1.shape == (16,)
