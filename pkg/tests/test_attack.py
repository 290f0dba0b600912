import numpy as np
import pytest

from maa import attack as atk
from maa.data import CaptionTokens, load_pair, tokenize
from maa.rscrop import build_crops


def naive_cosine(u, v):
    u = np.asarray(u).ravel()
    v = np.asarray(v).ravel()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u @ v / (nu * nv))


def naive_l1(model, crops, clean_stack, use_mgsd=True):
    """Double-loop oracle for the intra-modal term."""
    total = 0.0
    taps_per_crop = [model.encode_image(c) for _, _, c in crops.crops]
    n = len(clean_stack)
    for i in range(n):
        if not use_mgsd and i != n - 1:
            continue
        for taps in taps_per_crop:
            total += naive_cosine(taps[i], clean_stack[i])
    return total


def naive_l2(model, crops, text_embed):
    return sum(naive_cosine(model.encode_image(c)[-1], text_embed)
               for _, _, c in crops.crops)


def _crop_batch(model, image, seed=0):
    return build_crops(image, 1.5, 1.25, model.input_size, model.grid_step,
                       (1, model.grid_step - 1), 128, np.random.default_rng(seed))


@pytest.mark.parametrize("arch", ["patch_transformer", "residual_cnn"])
def test_loss_oracles(arch, rand_models, rng):
    model = rand_models[arch]
    for trial in range(4):
        image = rng.random((3, model.input_size, model.input_size))
        adv = np.clip(image + rng.uniform(-0.03, 0.03, image.shape), 0, 1)
        crops = _crop_batch(model, adv, seed=trial)
        clean_stack = model.encode_image(image)
        toks = CaptionTokens(tokens=[2, 3, 4, 5], words=list("abcd"))
        temb = model.encode_text(toks)

        l1 = atk.intra_modal_loss(model, crops, clean_stack)
        l2 = atk.cross_modal_loss(model, crops, temb)
        l3 = atk.image_objective(model, crops, clean_stack, temb)
        assert l1 == pytest.approx(naive_l1(model, crops, clean_stack), abs=1e-6)
        assert l2 == pytest.approx(naive_l2(model, crops, temb), abs=1e-6)
        assert l3 == pytest.approx(l1 + l2, abs=1e-9)
        # MGSD off restricts the intra-modal sum to the final tap
        l1_off = atk.intra_modal_loss(model, crops, clean_stack, use_mgsd=False)
        assert l1_off == pytest.approx(naive_l1(model, crops, clean_stack,
                                                use_mgsd=False), abs=1e-6)


def test_text_objective_oracle(rand_models, rng):
    model = rand_models["patch_transformer"]
    img = rng.random((3, 32, 32))
    clean = CaptionTokens(tokens=[2, 3, 4], words=list("abc"))
    adv = CaptionTokens(tokens=[2, 5, 4], words=list("aec"))
    img_emb = model.encode_image(img)[-1]
    expected = (naive_cosine(model.encode_text(adv), model.encode_text(clean))
                + naive_cosine(model.encode_text(adv), img_emb))
    assert atk.text_objective(model, adv, clean, img_emb) == pytest.approx(expected,
                                                                           abs=1e-9)


def test_cosine_edge_cases():
    assert atk.cosine([1.0, 0.0], [1.0, 0.0]) == pytest.approx(1.0)
    assert atk.cosine([1.0, 0.0], [-2.0, 0.0]) == pytest.approx(-1.0)
    with pytest.warns(RuntimeWarning, match="zero"):
        assert atk.cosine([0.0, 0.0], [1.0, 2.0]) == 0.0
    with pytest.raises(atk.AttackError):
        atk.cosine([1.0], [1.0, 2.0])


def test_attack_config_defaults_and_validation():
    cfg = atk.AttackConfig()
    assert cfg.epsilon_img == pytest.approx(4 / 255)
    assert cfg.iterations == 40
    assert cfg.step == pytest.approx(cfg.epsilon_img / 40 * 2.25)
    assert cfg.scale_set == [1.25, 1.5, 1.75, 2.0]
    assert cfg.rescale_period == 10
    assert cfg.batch_size == 4
    cfg.validate()
    with pytest.raises(atk.AttackError):
        atk.AttackConfig(epsilon_img=-0.1).validate()
    with pytest.raises(atk.AttackError):
        atk.AttackConfig(rescale_period=99).validate()
    with pytest.raises(atk.AttackError):
        atk.AttackConfig(scale_set=[0.5]).validate()
    atk.AttackConfig(scale_set=[0.5], allow_downscale=True).validate()
    assert cfg.hash() != atk.AttackConfig(iterations=41).hash()


def test_pgd_respects_budget_and_decreases_loss(rand_models, tiny_handle):
    model = rand_models["patch_transformer"]
    image, tokens = load_pair(tiny_handle, 0)
    cfg = atk.AttackConfig(iterations=6, rescale_period=6, seed=1)
    pair = atk.pgd_attack(model, image, tokens, cfg, sample_index=0)
    assert np.abs(pair.adv_image - image).max() <= cfg.epsilon_img + 1e-12
    assert pair.adv_image.min() >= 0.0 and pair.adv_image.max() <= 1.0
    assert len(pair.loss_trace) == 6
    # single rescale window, so the traced losses are directly comparable
    assert pair.loss_trace[-1][2] < pair.loss_trace[0][2]
    for l1, l2, li in pair.loss_trace:
        assert li == pytest.approx(l1 + l2, abs=1e-9)


def test_pgd_is_deterministic(rand_models, tiny_handle):
    model = rand_models["patch_transformer"]
    image, tokens = load_pair(tiny_handle, 1)
    cfg = atk.AttackConfig(iterations=4, rescale_period=2, seed=3)
    a = atk.pgd_attack(model, image, tokens, cfg, sample_index=1)
    b = atk.pgd_attack(model, image, tokens, cfg, sample_index=1)
    assert np.array_equal(a.adv_image, b.adv_image)
    c = atk.pgd_attack(model, image, tokens, cfg, sample_index=2)
    assert not np.array_equal(a.adv_image, c.adv_image)


def test_zero_epsilon_returns_clean(rand_models, tiny_handle):
    model = rand_models["patch_transformer"]
    image, tokens = load_pair(tiny_handle, 0)
    cfg = atk.AttackConfig(epsilon_img=0.0, iterations=2, rescale_period=1)
    pair = atk.pgd_attack(model, image, tokens, cfg)
    assert np.array_equal(pair.adv_image, image)


def test_plain_pgd_uses_single_fullres_view(rand_models, tiny_handle):
    model = rand_models["patch_transformer"]
    cfg = atk.AttackConfig(use_resizing=False, use_sliding=False, use_mgsd=False)
    plan = atk.make_crop_plan(model, cfg, sample_index=0, window=0)
    assert plan.offsets == [(0, 0)]
    assert (plan.scaled_h, plan.scaled_w) == (model.input_size, model.input_size)


def test_lexicon_construction():
    lex = atk.build_lexicon(["red", "green"], ["circle", "square"])
    assert lex.get("red") == ["green"]
    assert sorted(lex.get("circle")) == ["square"]
    assert lex.get("missing") == []
    with pytest.raises(atk.AttackError):
        atk.CandidateLexicon({"red": ["red"]})


def brute_force_best(model, tokens, pos, cands, clean_txt, clean_img, vocab):
    best, best_val = None, np.inf
    for cand in cands:
        ids = list(tokens.tokens)
        ids[pos] = vocab.index[cand]
        emb = model.encode_text_batch([CaptionTokens(tokens=ids, words=tokens.words)])[0]
        val = atk.cosine(emb, clean_txt) + atk.cosine(emb, clean_img)
        if val < best_val:
            best, best_val = cand, val
    return best


def test_text_attack_matches_bruteforce_argmin(rand_models, tiny_handle):
    model = rand_models["patch_transformer"]
    spec = tiny_handle.spec
    lex = atk.build_lexicon(sorted(spec.color_vocab), sorted(spec.shape_vocab),
                            sorted(spec.layout_vocab))
    cfg = atk.AttackConfig(epsilon_txt=1)
    for idx in tiny_handle.indices("train")[:8]:
        image, tokens = load_pair(tiny_handle, idx)
        adv = atk.attack_text(model, tokens, image, lex, cfg, tiny_handle.vocab)
        changed = [p for p in range(tokens.length)
                   if adv.tokens[p] != tokens.tokens[p]]
        assert len(changed) <= 1
        if changed:
            p = changed[0]
            clean_txt = model.encode_text(tokens)
            clean_img = model.encode_image(image)[-1]
            want = brute_force_best(model, tokens, p, lex.get(tokens.words[p]),
                                    clean_txt, clean_img, tiny_handle.vocab)
            assert adv.words[p] == want


def test_text_attack_epsilon_zero_and_empty_lexicon(rand_models, tiny_handle):
    model = rand_models["patch_transformer"]
    image, tokens = load_pair(tiny_handle, 0)
    cfg0 = atk.AttackConfig(epsilon_txt=0)
    out = atk.attack_text(model, tokens, image, atk.CandidateLexicon({}), cfg0,
                          tiny_handle.vocab)
    assert out.tokens == tokens.tokens
    with pytest.warns(RuntimeWarning, match="lexicon"):
        out = atk.attack_text(model, tokens, image, atk.CandidateLexicon({}),
                              atk.AttackConfig(epsilon_txt=1), tiny_handle.vocab)
    assert out.tokens == tokens.tokens


def test_word_edit_distance():
    a = CaptionTokens(tokens=[1, 2, 3], words=list("abc"))
    b = CaptionTokens(tokens=[1, 5, 3], words=list("aec"))
    assert atk.word_edit_distance(a, b) == 1
    with pytest.raises(atk.AttackError):
        atk.word_edit_distance(a, CaptionTokens(tokens=[1], words=["a"]))
