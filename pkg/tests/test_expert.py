import numpy as np
import pytest
from conftest import make_sample, randomize_params, tiny_model, zero_params

from mognet.expert import FORCED, SELF_GREEDY
from mognet.tensor import Tensor

# softmax([0, ln 3]) = [1/4, 3/4]
QUARTER_WEIGHTS = np.array([0.25, 0.75])


def rig_scores_zero(model, prefix="expert0"):
    """Zero the attention head so every position scores 0."""
    model.params[f"{prefix}.attn.W"].data[...] = 0.0
    model.params[f"{prefix}.attn.b"].data[...] = 0.0
    model.params[f"{prefix}.attn.v"].data[...] = 0.0


class TestAttend:
    def test_single_position_takes_all_weight(self):
        model = tiny_model(seed=4)
        ex = model.experts[0]
        H = Tensor(np.array([[0.3, -0.2, 0.5, 0.1]]))
        ctx, alpha = ex.attend(Tensor(np.zeros(4)), H)
        assert alpha.data.shape == (1,)
        assert alpha.data[0] == 1.0
        assert np.allclose(ctx.data, H.data[0], atol=1e-15)

    def test_zero_score_vector_gives_uniform_weights(self):
        model = tiny_model(seed=4)
        ex = model.experts[0]
        model.params["expert0.attn.v"].data[...] = 0.0
        H = Tensor(np.random.default_rng(0).uniform(-1, 1, (5, 4)))
        _, alpha = ex.attend(Tensor(np.zeros(4)), H)
        assert np.allclose(alpha.data, 0.2, atol=1e-15)

    def test_hand_set_scores_quarter_three_quarters(self):
        # Wh = I, Ws = 0, b = 0, v = [2,0,0,0]; rows chosen so the scores
        # come out [0, ln 3], hence weights [1/4, 3/4].
        model = tiny_model()
        W = model.params["expert0.attn.W"]
        W.data[...] = 0.0
        W.data[:4] = np.eye(4)
        model.params["expert0.attn.b"].data[...] = 0.0
        model.params["expert0.attn.v"].data[...] = np.array([2.0, 0, 0, 0])
        x2 = np.arctanh(np.log(3.0) / 2.0)
        H = Tensor(np.array([[0.0, 1.0, 0.0, 0.0],
                             [x2, -1.0, 2.0, 0.5]]))
        ctx, alpha = model.experts[0].attend(Tensor(np.zeros(4)), H)
        assert np.allclose(alpha.data, QUARTER_WEIGHTS, atol=1e-12)
        assert np.allclose(ctx.data, 0.25 * H.data[0] + 0.75 * H.data[1], atol=1e-12)

    def test_weights_form_distribution(self):
        rng = np.random.default_rng(11)
        model = tiny_model()
        for _ in range(50):
            randomize_params(model, rng)
            m = int(rng.integers(1, 7))
            H = Tensor(rng.uniform(-2, 2, (m, 4)))
            s = Tensor(rng.uniform(-2, 2, 4))
            _, alpha = model.experts[0].attend(s, H)
            assert np.all(alpha.data >= 0)
            assert abs(alpha.data.sum() - 1.0) <= 1e-12


class TestDecodeStep:
    def encode(self, model):
        return model.encode(make_sample([1, 2, 3], [4, 2]))

    def test_zero_output_projection_gives_uniform(self):
        model = tiny_model(seed=1)
        model.params["expert0.out.U"].data[...] = 0.0
        model.params["expert0.out.b"].data[...] = 0.0
        enc = self.encode(model)
        ex = model.experts[0]
        dist, _ = ex.decode_step(ex.init_state(enc.context_vector), 1, enc)
        assert np.allclose(dist.data, 1.0 / 6.0, atol=1e-15)
        assert len(set(dist.data.tolist())) == 1

    def test_identical_inputs_identical_distributions(self):
        model = tiny_model(seed=1)
        enc = self.encode(model)
        ex = model.experts[0]
        d1, _ = ex.decode_step(ex.init_state(enc.context_vector), 3, enc)
        d2, _ = ex.decode_step(ex.init_state(enc.context_vector), 3, enc)
        assert np.array_equal(d1.data, d2.data)

    def test_hand_set_logits_five_tokens(self):
        model = tiny_model(vocab_size=5, seed=1)
        model.params["expert0.out.U"].data[...] = 0.0
        model.params["expert0.out.b"].data[...] = np.array([0, 0, 0, 0, np.log(4.0)])
        enc = self.encode(model)
        ex = model.experts[0]
        dist, _ = ex.decode_step(ex.init_state(enc.context_vector), 1, enc)
        assert np.allclose(dist.data, [0.125, 0.125, 0.125, 0.125, 0.5], atol=1e-15)

    def test_prefix_records_consumed_tokens(self):
        model = tiny_model(seed=1)
        enc = self.encode(model)
        ex = model.experts[0]
        state = ex.init_state(enc.context_vector)
        _, state = ex.decode_step(state, model.cfg.bos_id, enc)
        _, state = ex.decode_step(state, 4, enc)
        assert state.prefix == [model.cfg.bos_id, 4]


class TestRollout:
    def encode(self, model):
        return model.encode(make_sample([1, 2, 3], [4, 2]))

    def test_constant_argmax_runs_to_cap(self):
        model = tiny_model(seed=1)
        model.params["expert0.out.U"].data[...] = 0.0
        model.params["expert0.out.b"].data[...] = 0.0
        model.params["expert0.out.b"].data[4] = 5.0
        enc = self.encode(model)
        out = model.experts[0].rollout(enc, SELF_GREEDY)
        assert out.tokens == [4] * model.cfg.max_len
        assert out.cell_calls == model.cfg.max_len

    def test_forced_matches_manual_teacher_forcing(self):
        model = tiny_model(seed=9)
        enc = self.encode(model)
        ex = model.experts[0]
        target = [4, 5, 2]
        out = ex.rollout(enc, FORCED, forced_tokens=target, max_len=3)
        assert out.tokens == target
        state = ex.init_state(enc.context_vector)
        prev = model.cfg.bos_id
        for j, tok in enumerate(target):
            dist, state = ex.decode_step(state, prev, enc)
            assert np.array_equal(dist.data, out.dists[j].data)
            prev = tok

    def test_stops_after_eos(self):
        model = tiny_model(seed=1)
        model.params["expert0.out.U"].data[...] = 0.0
        model.params["expert0.out.b"].data[...] = 0.0
        model.params["expert0.out.b"].data[model.cfg.eos_id] = 5.0
        enc = self.encode(model)
        out = model.experts[0].rollout(enc, SELF_GREEDY)
        assert out.tokens == [model.cfg.eos_id]
        assert out.cell_calls == 1

    def test_length_cap_and_eos_position(self):
        rng = np.random.default_rng(23)
        model = tiny_model()
        enc_sample = make_sample([1, 2, 3], [4, 2])
        for _ in range(30):
            randomize_params(model, rng, scale=1.0)
            enc = model.encode(enc_sample)
            out = model.experts[0].rollout(enc, SELF_GREEDY)
            assert len(out.tokens) <= model.cfg.max_len
            if model.cfg.eos_id in out.tokens:
                assert out.tokens.index(model.cfg.eos_id) == len(out.tokens) - 1

    def test_bad_arguments_rejected(self):
        model = tiny_model()
        enc = self.encode(model)
        with pytest.raises(ValueError):
            model.experts[0].rollout(enc, "beam")
        with pytest.raises(ValueError):
            model.experts[0].rollout(enc, FORCED, forced_tokens=[])
        with pytest.raises(ValueError):
            model.experts[0].rollout(enc, SELF_GREEDY, max_len=0)

    def test_every_step_distribution_normalized(self):
        rng = np.random.default_rng(31)
        model = tiny_model()
        enc_sample = make_sample([2, 3], [4, 2])
        for _ in range(25):
            randomize_params(model, rng)
            enc = model.encode(enc_sample)
            out = model.experts[1].rollout(enc, SELF_GREEDY)
            for dist in out.dists:
                assert np.all(dist.data >= 0)
                assert abs(dist.data.sum() - 1.0) <= 1e-12


class TestExpertIsolation:
    def test_parameters_are_disjoint_storage(self):
        model = tiny_model(seed=6)
        enc = model.encode(make_sample([1, 2, 3], [4, 2]))
        before = model.experts[0].rollout(enc, SELF_GREEDY)
        for name, p in model.params.items():
            if name.startswith("expert1."):
                p.data += 0.37
        enc2 = model.encode(make_sample([1, 2, 3], [4, 2]))
        after = model.experts[0].rollout(enc2, SELF_GREEDY)
        assert before.tokens == after.tokens
        for da, db in zip(before.dists, after.dists):
            assert np.array_equal(da.data, db.data)
