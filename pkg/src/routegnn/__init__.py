"""Graph networks with route-based multi-head self-attention.

The library bundles a small float64 autodiff core, graph ingestion and route
features, the attention mechanism itself, a residual network built from it,
a graph-distinguishability lab, and a training harness with synthetic tasks.
"""
from .tensor import MASK_VALUE, NonFiniteError, ShapeError, Tensor
from .graphs import (BatchedGraphs, Graph, RouteTensor, UNREACHABLE,
                     attention_ball_mask, batch, distance_bin_features,
                     encode_graph6, graph_from_edges, load_graph_json,
                     locality_mask, parse_graph6, read_graph6_file,
                     route_features, route_histogram, shortest_distances)
from .attention import (AttentionConfig, RouteAttentionParams, attention_probs,
                        route_attn, route_mhsa, route_scores)
from .model import (ModelConfig, RouteGraphNetwork, attention_dump, embed_inputs,
                    graph_head, layer_forward, node_head, sum_readout)
from .nn import (AdamState, Linear, adam_init, adam_step, grad_check, init_linear,
                 load_parameters, save_parameters)
from .isomorphism import (SeparationReport, WLColoring, builtin_graphs, gi_separate,
                          separation_model_config, spectrum_compare, wl_distinguish,
                          wl_refine)
from .training import (GraphDataset, LabeledGraph, TrainConfig, TrainResult, auc_roc,
                       evaluate, load_dataset, masked_cross_entropy, masked_mae,
                       save_dataset, synth_graph_task, synth_node_task, train)

__version__ = "0.1.0"
