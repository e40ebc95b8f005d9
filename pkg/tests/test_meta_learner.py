import numpy as np
import pytest
import torch
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from megacrn.errors import ConfigError
from megacrn.graph_ops import adaptive_graph
from megacrn.meta_learner import (
    MetaNodeBank,
    consistency_loss,
    contrastive_loss,
    hyper_embedding,
    meta_graph,
    query,
    read,
    top2_indices,
)
from oracles import central_difference, np_softmax_rows, relative_error


def t(x):
    return torch.tensor(x, dtype=torch.float64)


@pytest.fixture
def bank():
    torch.manual_seed(0)
    return MetaNodeBank(hidden_dim=2, memory_size=3, memory_dim=3, embed_dim=2)


class TestQuery:
    def test_zero_projection(self, bank):
        with torch.no_grad():
            bank.w_q.zero_()
            bank.b_q.zero_()
        assert torch.equal(query(torch.randn(4, 2), bank), torch.zeros(4, 3))

    def test_identity_projection(self):
        bank = MetaNodeBank(hidden_dim=3, memory_size=2, memory_dim=3)
        with torch.no_grad():
            bank.w_q.copy_(torch.eye(3))
            bank.b_q.zero_()
        H = torch.randn(4, 3)
        assert torch.equal(query(H, bank), H)

    def test_matches_dense_oracle(self, bank):
        with torch.no_grad():
            bank.b_q.normal_()
        H = torch.randn(2, 2)
        expected = H.numpy() @ bank.w_q.detach().numpy() + bank.b_q.detach().numpy()
        assert np.allclose(query(H, bank).detach().numpy(), expected, atol=1e-14)

    def test_shape_mismatch(self, bank):
        with pytest.raises(ValueError):
            query(torch.randn(4, 5), bank)


class TestRead:
    def test_zero_query_uniform(self):
        phi = torch.randn(4, 3)
        out = read(torch.zeros(2, 3), phi)
        assert torch.allclose(out.A, torch.full((2, 4), 0.25))
        assert torch.allclose(out.M, phi.mean(0).expand(2, 3))

    def test_saturation_on_orthonormal_prototypes(self):
        phi = torch.eye(3)
        out = read(50.0 * phi[0:1], phi)
        assert abs(out.A[0, 0].item() - 1.0) < 1e-6
        assert (out.M[0] - phi[0]).abs().max() < 1e-6
        assert out.top2[0, 0].item() == 0

    def test_hand_sized_case_matches_softmax_oracle(self):
        phi = t([[1.0, 0.0], [0.0, 2.0], [-1.0, 1.0]])
        Q = t([[0.5, 0.25], [-1.0, 0.3]])
        A = np_softmax_rows(Q.numpy() @ phi.numpy().T)
        out = read(Q, phi)
        assert np.allclose(out.A.numpy(), A, atol=1e-15)
        assert np.allclose(out.M.numpy(), A @ phi.numpy(), atol=1e-15)
        assert out.top2.tolist() == [np.argsort(-row, kind="stable")[:2].tolist() for row in A]

    def test_single_prototype_is_config_error(self):
        with pytest.raises(ConfigError):
            read(torch.randn(2, 3), torch.randn(1, 3))

    def test_ties_break_to_lowest_index(self):
        assert top2_indices(t([[1.0, 3.0, 3.0, 3.0]])).tolist() == [[1, 2]]
        assert top2_indices(t([[0.0, 0.0, 0.0]])).tolist() == [[0, 1]]

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 2), elements=st.floats(-5, 5)),
           arrays(np.float64, (4, 2), elements=st.floats(-5, 5)))
    def test_attention_rows_normalized(self, Q, phi):
        out = read(t(Q), t(phi))
        assert torch.allclose(out.A.sum(-1), torch.ones(3), atol=1e-6)
        assert ((out.A > 0) & (out.A < 1)).all()
        assert (out.top2[:, 0] != out.top2[:, 1]).all()

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 2), elements=st.floats(-3, 3)),
           arrays(np.float64, (5, 2), elements=st.floats(-3, 3)),
           st.floats(0.1, 10))
    def test_positive_scaling_keeps_ranking(self, Q, phi, c):
        logits = Q @ phi.T
        top = np.sort(logits, axis=1)[:, ::-1]
        assume(np.all(top[:, 0] - top[:, 1] > 1e-6) and np.all(top[:, 1] - top[:, 2] > 1e-6))
        assert torch.equal(read(t(Q), t(phi)).top2, read(c * t(Q), t(phi)).top2)


class TestMetaGraph:
    def test_zero_hypernetwork_uniform(self, bank):
        with torch.no_grad():
            bank.w_e.zero_()
            bank.b_e.zero_()
        P, E = meta_graph(torch.randn(3, 3), bank)
        assert torch.equal(E, torch.zeros(3, 2))
        assert torch.allclose(P, torch.full((3, 3), 1 / 3))

    def test_zero_meta_nodes_uniform(self, bank):
        with torch.no_grad():
            bank.b_e.zero_()
        P, _ = meta_graph(torch.zeros(3, 3), bank)
        assert torch.allclose(P, torch.full((3, 3), 1 / 3))

    def test_equals_adaptive_of_hypernetwork(self, bank):
        with torch.no_grad():
            bank.b_e.normal_()
        M = torch.randn(3, 3)
        P, E = meta_graph(M, bank)
        assert torch.equal(P, adaptive_graph(M @ bank.w_e + bank.b_e))
        assert torch.equal(P, adaptive_graph(hyper_embedding(M, bank)))

    def test_bias_can_be_disabled(self):
        bank = MetaNodeBank(2, 3, 3, 2, hyper_bias=False)
        assert bank.b_e is None
        M = torch.randn(3, 3)
        assert torch.equal(meta_graph(M, bank)[1], M @ bank.w_e)

    def test_memory_only_bank_has_no_hypernetwork(self):
        bank = MetaNodeBank(2, 3, 3, 2, hyper=False)
        with pytest.raises(ConfigError):
            meta_graph(torch.randn(3, 3), bank)


class TestConsistencyLoss:
    def test_zero_at_positive_prototypes(self):
        phi = torch.randn(3, 2)
        top2 = torch.tensor([[1, 0], [2, 1]])
        assert consistency_loss(phi[[1, 2]], phi, top2).item() == 0.0

    def test_three_four_five(self):
        phi = t([[3.0, 4.0], [0.0, 0.0]])
        assert consistency_loss(t([[0.0, 0.0]]), phi, torch.tensor([[0, 1]])).item() == 25.0

    def test_random_case_matches_sum_of_squares(self):
        torch.manual_seed(4)
        Q, phi = torch.randn(2, 3), torch.randn(3, 3)
        top2 = read(Q, phi).top2
        expected = sum(((Q[i] - phi[top2[i, 0]]) ** 2).sum().item() for i in range(2))
        assert abs(consistency_loss(Q, phi, top2).item() - expected) < 1e-12

    def test_batched_keeps_batch_axis(self):
        Q, phi = torch.randn(5, 4, 3), torch.randn(3, 3)
        top2 = read(Q, phi).top2
        out = consistency_loss(Q, phi, top2)
        assert out.shape == (5,)
        assert torch.allclose(out[2], consistency_loss(Q[2], phi, top2[2]))


class TestContrastiveLoss:
    def test_inactive_hinge(self):
        phi = t([[0.0], [10.0]])
        assert contrastive_loss(t([[0.0]]), phi, torch.tensor([[0, 1]]), margin=1.0).item() == 0.0

    def test_scalar_hand_case(self):
        phi = t([[1.0], [2.0]])
        Q = t([[0.0]])
        top2 = torch.tensor([[0, 1]])
        assert contrastive_loss(Q, phi, top2, margin=1.0).item() == 0.0
        assert contrastive_loss(Q, phi, top2, margin=4.0).item() == 1.0

    def test_query_on_positive(self):
        phi = torch.randn(3, 2)
        top2 = torch.tensor([[0, 2]])
        neg = ((phi[0] - phi[2]) ** 2).sum().item()
        got = contrastive_loss(phi[[0]], phi, top2, margin=2.0).item()
        assert abs(got - max(2.0 - neg, 0.0)) < 1e-12

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 2), elements=st.floats(-5, 5)),
           arrays(np.float64, (4, 2), elements=st.floats(-5, 5)),
           st.floats(0, 5))
    def test_losses_non_negative(self, Q, phi, margin):
        top2 = read(t(Q), t(phi)).top2
        assert contrastive_loss(t(Q), t(phi), top2, margin).item() >= 0
        assert consistency_loss(t(Q), t(phi), top2).item() >= 0


def test_loss_gradients_match_finite_differences():
    torch.manual_seed(6)
    Q = torch.randn(4, 3, requires_grad=True)
    phi = torch.randn(5, 3, requires_grad=True)
    top2 = read(Q.detach(), phi.detach()).top2

    def hinge_args():
        return (((Q - phi[top2[:, 0]]) ** 2).sum(-1) - ((Q - phi[top2[:, 1]]) ** 2).sum(-1) + 1.0).detach()

    # keep every hinge well away from its kink so the central difference is smooth
    assert (hinge_args().abs() > 1e-3).all()

    def f():
        return (consistency_loss(Q, phi, top2) + contrastive_loss(Q, phi, top2, 1.0)).item()

    (consistency_loss(Q, phi, top2) + contrastive_loss(Q, phi, top2, 1.0)).backward()
    for tensor in (Q, phi):
        for idx in np.ndindex(*tensor.shape):
            num = central_difference(f, tensor.data, idx)
            assert relative_error(tensor.grad[idx].item(), num) < 1e-4
