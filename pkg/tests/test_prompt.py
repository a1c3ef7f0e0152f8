import jax
import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from errors import ConfigError, DataError, NumericError
from graph import EgoNetwork, FewShotTask, Graph, GraphCollection, ego_membership, ego_network
from model import freeze, init_encoder
from numerics import Param, finite_difference_check, init_mlp
from prompt import (
    ConditionNet,
    Prototypes,
    apply_prompt,
    class_prototypes,
    downstream_loss,
    generate_prompt,
    get_prompt_head,
    graph_embedding,
    init_condition_net,
    predict,
    predict_batch,
    prepare_context,
    prompt_state,
    readout_all,
    subgraph_readout,
    support_objective,
    task_embeddings,
    task_prototypes,
)
from train_utils import prompt_value_and_grad


def test_readout_single_member():
    emb = np.array([[2.0, -1.0], [0.5, 3.0]])
    ego = EgoNetwork(1, np.array([1]), 0)
    assert np.allclose(subgraph_readout(emb, ego, 1), emb[1])


def test_readout_identical_members():
    emb = np.tile([[1.0, 2.0, 3.0]], (4, 1))
    ego = EgoNetwork(0, np.arange(4), 1)
    assert np.allclose(subgraph_readout(emb, ego, 0), emb[0])


def test_readout_orthogonal_member(edge_graph):
    emb = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert np.allclose(subgraph_readout(emb, ego_network(edge_graph, 0, 1), 0), [0.5, 0.0])
    with pytest.raises(DataError):
        subgraph_readout(emb, ego_network(edge_graph, 0, 1), 1)


@pytest.mark.parametrize("delta", [0, 1, 2])
def test_readout_all_matches_single(dating_graph, delta):
    emb = np.random.default_rng(delta).normal(size=(6, 4))
    batched = readout_all(emb, ego_membership(dating_graph, delta))
    for v in range(6):
        single = subgraph_readout(emb, ego_network(dating_graph, v, delta), v)
        assert np.allclose(batched[v], single)


def test_readout_all_unweighted_is_mean(path_graph):
    emb = np.random.default_rng(1).normal(size=(4, 3))
    readouts = readout_all(emb, ego_membership(path_graph, 1), weighted=False)
    assert np.allclose(readouts[0], emb[[0, 1]].mean(axis=0))
    assert np.allclose(readouts[2], emb[[1, 2, 3]].mean(axis=0))


def test_generate_prompt_zero_weights():
    cn = init_condition_net(3, 2, seed=0)
    for param in cn.params:
        param.value = jnp.zeros_like(param.value)
    assert np.allclose(generate_prompt(cn, np.array([1.0, -2.0, 4.0])), 0.5)
    assert generate_prompt(cn, np.ones((5, 3))).shape == (5, 3)
    with pytest.raises(NumericError):
        generate_prompt(cn, np.ones(4))


def test_condition_net_dims():
    with pytest.raises(ConfigError):
        ConditionNet(init_mlp(4, 2, 3))
    with pytest.raises(ConfigError):
        ConditionNet(init_mlp(8, 80, 8))
    assert init_condition_net(100, 64).hidden_dim == 64


def test_apply_prompt():
    assert np.allclose(apply_prompt([2.0, 0.5], [1.0, 4.0]), [2.0, 2.0])
    with pytest.raises(NumericError):
        apply_prompt([1.0, 2.0], [1.0, 2.0, 3.0])


def test_graph_embedding():
    assert np.allclose(graph_embedding([[1.0, 2.0], [3.0, 0.0]]), [2.0, 1.0])
    with pytest.raises(DataError):
        graph_embedding(np.zeros((0, 2)))


def test_class_prototypes():
    protos = class_prototypes([([1.0, 0.0], 0), ([0.0, 1.0], 0), ([2.0, 2.0], 1)], [0, 1])
    assert np.allclose(protos.vectors, [[0.5, 0.5], [2.0, 2.0]])
    assert protos.classes == (0, 1)
    with pytest.raises(DataError, match="no support"):
        class_prototypes([([1.0, 0.0], 0)], [0, 1])
    with pytest.raises(DataError):
        class_prototypes([([1.0, 0.0], 3)], [0])


def test_downstream_loss_uniform():
    protos = Prototypes(jnp.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]), (0, 1, 2))
    # zero query: equal logits
    assert downstream_loss([([0.0, 0.0], 1)], protos) == pytest.approx(np.log(3))


def test_downstream_loss_example():
    protos = Prototypes(jnp.array([[1.0, 0.0], [0.0, 1.0]]), (0, 1))
    assert downstream_loss([([1.0, 0.0], 0)], protos, tau=1.0) == pytest.approx(0.3133, abs=1e-4)
    with pytest.raises(ConfigError):
        downstream_loss([([1.0, 0.0], 0)], protos, tau=0.0)
    with pytest.raises(DataError):
        downstream_loss([([1.0, 0.0], 5)], protos)


def test_predict():
    protos = Prototypes(jnp.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]), (0, 1, 2))
    assert predict([0.2, 0.9], protos) == 1
    assert predict([0.0, 0.0], protos) == 0
    scaled = Prototypes(protos.vectors * 7.0, protos.classes)
    assert predict([0.2, 0.9], scaled) == 1
    queries = np.array([[0.2, 0.9], [5.0, 0.1], [1.0, 1.1]])
    assert predict_batch(queries, protos).tolist() == [predict(q, protos) for q in queries]


def test_predict_tie_smallest_class():
    protos = Prototypes(jnp.array([[1.0, 0.0], [1.0, 0.0]]), (3, 7))
    assert predict([1.0, 1.0], protos) == 3


def _node_task() -> FewShotTask:
    return FewShotTask((0, 1), ((0, 0), (2, 1), (4, 0), (3, 1)), ((1, 0), (5, 1)), "node", 2)


@pytest.mark.parametrize("variant", ["pronog", "single_prompt", "node_cond", "no_sim"])
@pytest.mark.parametrize("seed", range(20))
def test_support_objective_gradient(dating_graph, variant, seed):
    enc = freeze(init_encoder([3, 5], "tanh", seed=seed, kind=("gcn", "sage")[seed % 2]))
    context = prepare_context(enc, dating_graph, delta=1 + seed % 2, variant=variant)
    head = get_prompt_head(variant, 5, hidden=3, seed=seed + 1)
    if head.prompt is not None:
        head.prompt.value = jnp.asarray(np.random.default_rng(seed).uniform(0.5, 1.5, size=(1, 5)))
    task = _node_task()
    support_ids = jnp.asarray(task.support_ids)
    support_pos = jnp.asarray(task.support_labels)

    @jax.jit
    def f(values):
        return support_objective(
            values, context.embeddings, context.condition, None, support_ids, support_pos, 0.5,
            variant, head.activation, head.output_activation, context.num_instances, 2,
        )

    _, grads = prompt_value_and_grad(
        [p.value for p in head.params], context.embeddings, context.condition, None, support_ids,
        support_pos, 0.5, variant=variant, activation=head.activation,
        output_activation=head.output_activation, num_instances=context.num_instances, num_classes=2,
    )
    for param, grad in zip(head.params, grads):
        param.zero_grad()
        param.accumulate(grad)
    assert finite_difference_check(f, head.params) < 1e-4


def test_identical_neighborhoods_give_identical_prompts():
    # nodes 0 and 1 are symmetric: both linked to 2 and 3 only
    g = Graph.from_edges(4, [(0, 2), (0, 3), (1, 2), (1, 3)], np.array([[1.0, 0.0]] * 2 + [[0.3, 1.0], [0.0, 2.0]]))
    enc = freeze(init_encoder([2, 4], "relu", seed=3))
    context = prepare_context(enc, g, delta=2)
    state = prompt_state(get_prompt_head("pronog", 4, hidden=2, seed=0), context)
    assert np.allclose(state.prompts[0], state.prompts[1])
    assert np.allclose(state.prompted[0], state.prompted[1])


def test_no_prompt_state_is_identity(dating_graph):
    enc = freeze(init_encoder([3, 4], seed=0))
    context = prepare_context(enc, dating_graph, variant="no_prompt")
    head = get_prompt_head("no_prompt", 4)
    state = prompt_state(head, context)
    assert head.params == []
    assert np.allclose(state.prompted, context.embeddings)
    assert np.allclose(task_embeddings(head, context, np.array([1, 4])), context.embeddings[[1, 4]])


def test_single_prompt_of_ones_matches_no_prompt(dating_graph):
    enc = freeze(init_encoder([3, 4], seed=0))
    task = _node_task()
    plain = get_prompt_head("no_prompt", 4)
    single = get_prompt_head("single_prompt", 4)
    a = task_prototypes(plain, prepare_context(enc, dating_graph, variant="no_prompt"), task)
    b = task_prototypes(single, prepare_context(enc, dating_graph, variant="single_prompt"), task)
    assert np.allclose(a.vectors, b.vectors)


def test_graph_context_pools_prompted_nodes(triangle):
    collection = GraphCollection((triangle, triangle.with_features(np.eye(3)[[2, 0, 1]])), np.array([0, 1]))
    enc = freeze(init_encoder([3, 4], "relu", seed=0))
    context = prepare_context(enc, collection, delta=1, variant="node_cond")
    head = get_prompt_head("node_cond", 4, hidden=2, seed=0)
    state = prompt_state(head, context)
    pooled = task_embeddings(head, context, np.array([1]))
    assert context.instance_kind == "graph" and context.num_instances == 2
    assert np.allclose(pooled[0], graph_embedding(state.prompted[3:]))


def test_prepare_context_unknown_variant(dating_graph):
    with pytest.raises(ConfigError):
        prepare_context(init_encoder([3, 4]), dating_graph, variant="gpf")
    with pytest.raises(ConfigError):
        get_prompt_head("gpf", 4)


def test_single_prompt_head_starts_at_ones():
    head = get_prompt_head("single_prompt", 6)
    assert isinstance(head.prompt, Param)
    assert np.allclose(head.prompt.value, 1.0)


@settings(max_examples=40, deadline=None)
@given(
    query=st.lists(st.integers(-5, 5), min_size=3, max_size=3).filter(any),
    scale=st.sampled_from([0.25, 2.0, 8.0]),
)
def test_predict_scale_invariant(query, scale):
    protos = Prototypes(jnp.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.3, 0.3, 1.0]]), (0, 1, 2))
    scaled = Prototypes(protos.vectors * scale, protos.classes)
    query = np.asarray(query, dtype=np.float64)
    assert predict(query, protos) == predict(query * scale, scaled)
