import warnings
from dataclasses import replace

import numpy as np
import pytest
import scipy.special

from macd.backend import (
    DEFAULT_GRID,
    GradRequest,
    TOK_PROBE,
    TOK_YES,
    ToyBackend,
    ToySurrogateParams,
    ZONE_POOL_RC,
    fd_gradient,
    make_backend,
)
from macd.compose import ComposeConfig, FrameMaskPolicy, StrengthVector
from macd.errors import ConfigError, EmptyQuery, VocabMismatch
from macd.tracking import Detection, TrackerConfig, build_tracks
from macd.video import BoundingBox, Seed, TokenSequence, VideoTensor

VOCAB = 32


def seq(*ids):
    return TokenSequence(tuple(ids), VOCAB)


def video_of(arr):
    return VideoTensor(np.asarray(arr, dtype=np.float32))


def rand_video(rng, t=2, h=8, w=8, c=1):
    return video_of(rng.random((t, h, w, c)))


def disjoint_tracks(n, t_frames, hw=8, sigma=0.8):
    """Up to 4 non-overlapping tracks laid out in quadrants; union-max has
    no cross-track kinks on these, so FD matches analytic gradients."""
    spots = [(0.5, 0.5, 3.4, 3.4), (4.5, 0.5, 7.4, 3.4),
             (0.5, 4.5, 3.4, 7.4), (4.5, 4.5, 7.4, 7.4)]
    dets = []
    for k in range(n):
        x1, y1, x2, y2 = spots[k]
        for f in range(t_frames):
            dets.append(Detection(f, BoundingBox(x1, y1, x2, y2), k, 0.9))
    return build_tracks(dets, (hw, hw), TrackerConfig(blur_sigma=sigma))


class TestLogits:
    def test_zero_params_uniform(self):
        be = ToyBackend(ToySurrogateParams.zeros())
        rng = np.random.default_rng(0)
        out = be.logits(rand_video(rng), seq(1, 2), seq())
        assert np.array_equal(out, np.zeros(VOCAB))

    def test_bias_boost_exact(self):
        rng = np.random.default_rng(1)
        v = rand_video(rng)
        plain = make_backend("toy:5")
        biased = make_backend("toy-biased:5")
        lp = plain.logits(v, seq(3), seq(4))
        lb = biased.logits(v, seq(3), seq(4))
        boost = biased.params.bias_boost
        for tok in range(VOCAB):
            expected = boost if tok in biased.params.hallucination_tokens else 0.0
            assert lb[tok] - lp[tok] == expected

    def test_masked_pool_equalizes_logits(self):
        # two videos differing only inside a fully masked pool produce the
        # same rendered view, hence bit-identical logits
        from macd.compose import render_counterfactual
        gh, gw = DEFAULT_GRID
        a = np.full((1, 16, 16, 1), 0.25, dtype=np.float32)
        b = a.copy()
        b[0, 4:8, 4:8, 0] = 0.75  # zone pool (1,1) on the 4x4 grid
        dets = [Detection(0, BoundingBox(4, 4, 8, 8), 0, 0.9)]
        tracks = build_tracks(dets, (16, 16), TrackerConfig(blur_sigma=0.0))
        cfg = ComposeConfig()
        be = make_backend("toy:9")
        views = [render_counterfactual(video_of(x), tracks,
                                       StrengthVector([1.0], [0.0]), cfg).video
                 for x in (a, b)]
        la = be.logits(views[0], seq(3), seq())
        lb = be.logits(views[1], seq(3), seq())
        assert np.array_equal(la, lb)

    def test_vocab_mismatch(self):
        be = make_backend("toy:0")
        with pytest.raises(VocabMismatch):
            be.logits(rand_video(np.random.default_rng(0)),
                      TokenSequence((40,), 64), seq())

    def test_determinism_bit_identical(self):
        rng = np.random.default_rng(2)
        v = rand_video(rng)
        a = make_backend("toy:77").logits(v, seq(1, 2), seq(5))
        b = make_backend("toy:77").logits(v, seq(1, 2), seq(5))
        assert np.array_equal(a, b)

    def test_softmax_sums_to_one(self):
        rng = np.random.default_rng(3)
        for s in range(5):
            be = make_backend(f"toy:{s}")
            logits = be.logits(rand_video(rng), seq(1), seq())
            p = np.exp(logits - logits.max())
            p /= p.sum()
            assert abs(p.sum() - 1.0) < 1e-9


class TestQueryLoss:
    def test_uniform_is_log_vocab(self):
        be = ToyBackend(ToySurrogateParams.zeros())
        v = rand_video(np.random.default_rng(0))
        assert be.query_loss(v, seq(4, 9, 2)) == pytest.approx(np.log(VOCAB),
                                                               abs=1e-12)

    def test_certain_model_zero_loss(self):
        params = ToySurrogateParams.zeros()
        b = params.b.copy()
        b[7] = 60.0  # probability ~1 for token 7
        be = ToyBackend(replace(params, b=b))
        v = rand_video(np.random.default_rng(0))
        assert be.query_loss(v, seq(7, 7)) == pytest.approx(0.0, abs=1e-12)

    def test_against_independent_oracle(self):
        # independent path: numpy matmul + scipy log_softmax from the same
        # parameter arrays
        be = make_backend("toy:42")
        pm = be.params
        v = video_of(np.full((1, 8, 8, 1), 0.5))
        query = seq(1, 2)
        got = be.query_loss(v, query)

        pools = np.full(pm.n_pools, 0.5)
        expected = 0.0
        for n in range(len(query)):
            ctx = query.ids[:n]
            e = pm.embed[list(ctx)].sum(axis=0) if ctx else np.zeros(pm.embed_dim)
            logits = pm.b + pm.w_vis @ pools + pm.w_tok @ e
            expected += -scipy.special.log_softmax(logits)[query.ids[n]]
        expected /= len(query)
        assert got == pytest.approx(expected, abs=1e-10)

    def test_empty_query_rejected(self):
        be = make_backend("toy:0")
        with pytest.raises(EmptyQuery):
            be.query_loss(rand_video(np.random.default_rng(0)), seq())


class _StubLossBackend:
    """Configurable loss for exercising the FD oracle in isolation."""

    def __init__(self, fn):
        self.fn = fn

    def loss_at_strengths(self, req, strengths):
        return self.fn(strengths.concat())


class TestFdGradient:
    def _req(self, n_obj, n_frames):
        rng = np.random.default_rng(0)
        base = rand_video(rng, t=max(n_frames, 1))
        r = StrengthVector.filled(n_obj, n_frames, 0.5)
        return GradRequest(base=base, tracks=[], strengths=r, query=seq(1),
                           compose=ComposeConfig())

    def test_linear_loss_exact(self):
        a = np.array([0.3, -1.2, 2.0])
        stub = _StubLossBackend(lambda r: float(a[:r.size] @ r))
        req = self._req(3, 0)
        res = fd_gradient(stub, req, h=1e-3)
        assert np.allclose(res.gradient.object_r, a, atol=1e-10)
        assert res.one_sided == ()

    def test_quadratic_at_half(self):
        stub = _StubLossBackend(lambda r: float((r ** 2).sum()))
        req = self._req(1, 0)
        res = fd_gradient(stub, req, h=1e-3)
        assert res.gradient.object_r[0] == pytest.approx(1.0, abs=1e-9)

    def test_clamp_boundary_one_sided(self):
        stub = _StubLossBackend(lambda r: float(r.sum()))
        rng = np.random.default_rng(0)
        req = GradRequest(base=rand_video(rng, t=1), tracks=[],
                          strengths=StrengthVector([1.0], np.zeros(1)),
                          query=seq(1), compose=ComposeConfig())
        res = fd_gradient(stub, req, h=1e-3)
        assert 0 in res.one_sided
        assert res.gradient.object_r[0] == pytest.approx(1.0, abs=1e-9)


class TestAnalyticGradient:
    def test_zero_gradient_without_tracks(self):
        be = make_backend("toy:1")
        rng = np.random.default_rng(1)
        req = GradRequest(base=rand_video(rng), tracks=[],
                          strengths=StrengthVector(np.zeros(0), np.zeros(2)),
                          query=seq(3), compose=ComposeConfig())
        loss, grad = be.loss_and_grad(req)
        assert loss > 0
        assert grad.object_r.size == 0
        assert not grad.frame_r.any()

    def test_constructed_positive_component(self):
        # weights tie one bright pool to the query token: masking it toward
        # the darker fill raises the loss, so the ascent gradient is positive
        params = ToySurrogateParams.zeros()
        w = params.w_vis.copy()
        zone = ZONE_POOL_RC[0] * DEFAULT_GRID[1] + ZONE_POOL_RC[1]
        w[5, zone] = 5.0
        be = ToyBackend(replace(params, w_vis=w))
        frames = np.full((1, 16, 16, 1), 0.9, dtype=np.float32)
        dets = [Detection(0, BoundingBox(4, 4, 8, 8), 0, 0.9)]
        tracks = build_tracks(dets, (16, 16), TrackerConfig(blur_sigma=0.0))
        req = GradRequest(base=video_of(frames), tracks=tracks,
                          strengths=StrengthVector([0.75], [0.0]),
                          query=seq(5), compose=ComposeConfig())
        _, grad = be.loss_and_grad(req)
        assert grad.object_r[0] > 0

    @pytest.mark.parametrize("fusion", ["max", "confnorm", "avg"])
    def test_matches_fd_across_seeds(self, fusion):
        worst = 0.0
        for s in range(10):
            rng = np.random.default_rng(1000 + s)
            t_frames = int(rng.integers(1, 5))
            k = int(rng.integers(1, 5))
            base = rand_video(rng, t=t_frames)
            tracks = disjoint_tracks(k, t_frames)
            r = StrengthVector(rng.uniform(0.25, 0.6, k),
                               rng.uniform(0.05, 0.25, t_frames))
            be = make_backend(f"toy:{s}")
            req = GradRequest(
                base=base, tracks=tracks, strengths=r,
                query=seq(TOK_PROBE, int(rng.integers(0, VOCAB))),
                compose=ComposeConfig(fusion=fusion,
                                      policy=FrameMaskPolicy(mode="trainable")))
            _, ga = be.loss_and_grad(req)
            gf = fd_gradient(be, req, h=1e-3).gradient
            a = np.concatenate([ga.object_r, ga.frame_r])
            f = np.concatenate([gf.object_r, gf.frame_r])
            rel = np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), 1e-8)
            worst = max(worst, float(rel.max()))
        assert worst <= 1e-3

    def test_addclamp_falls_back_to_fd(self):
        be = make_backend("toy:4")
        rng = np.random.default_rng(4)
        tracks = disjoint_tracks(1, 2)
        req = GradRequest(base=rand_video(rng), tracks=tracks,
                          strengths=StrengthVector([0.4], np.zeros(2)),
                          query=seq(3),
                          compose=ComposeConfig(render="addclamp"))
        with pytest.warns(UserWarning, match="finite differences"):
            loss, grad = be.loss_and_grad(req)
        gf = fd_gradient(be, req).gradient
        assert np.allclose(grad.object_r, gf.object_r, atol=1e-12)


class TestBiasSeparability:
    def _extreme_views(self):
        return (video_of(np.zeros((1, 4, 4, 1))),
                video_of(np.ones((1, 4, 4, 1))))

    def _backend(self, boost):
        # single pool; token 3's logit spans [0, 2] across views, so the
        # visual dynamic range is exactly 2
        params = ToySurrogateParams.zeros(vocab_size=4, embed_dim=2,
                                          pool_grid=(1, 1), bias_boost=boost)
        w = params.w_vis.copy()
        w[3, 0] = 2.0
        return ToyBackend(replace(params, w_vis=w,
                                  hallucination_tokens=(1,)))

    def test_boost_above_range_video_invariant(self):
        be = self._backend(boost=2.5)
        dark, bright = self._extreme_views()
        q = TokenSequence((0,), 4)
        p = TokenSequence((), 4)
        assert int(np.argmax(be.logits(dark, q, p))) == 1
        assert int(np.argmax(be.logits(bright, q, p))) == 1

    def test_boost_below_range_flips(self):
        be = self._backend(boost=1.0)
        dark, bright = self._extreme_views()
        q = TokenSequence((0,), 4)
        p = TokenSequence((), 4)
        assert int(np.argmax(be.logits(dark, q, p))) == 1
        assert int(np.argmax(be.logits(bright, q, p))) == 3


class TestMakeBackend:
    def test_unknown_spec(self):
        with pytest.raises(ConfigError):
            make_backend("gpt4:0")

    def test_bad_seed(self):
        with pytest.raises(ConfigError):
            make_backend("toy:abc")

    def test_capabilities(self):
        caps = make_backend("toy:0").capabilities()
        assert caps.vocab_size == VOCAB
        assert caps.supports_analytic_grad
