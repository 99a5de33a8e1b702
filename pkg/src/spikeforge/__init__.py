"""spikeforge: ANN-to-SNN conversion, layer-sequential spiking simulation
(baseline / shuffled / two-phase probabilistic neurons), and a
verification harness for the underlying math."""

from .calibrate import (CalibrationError, ConvertedModel, SiteStats,
                        ThresholdPlan, absorb_thresholds,
                        collect_activation_stats, convert, fit_thresholds)
from .engine import (NeuronMode, SimTrace, SiteTrace, if_layer_step,
                     shuffle_spikes, snn_forward, snn_forward_baseline,
                     snn_forward_shuffle, snn_forward_tpp, tpp_layer,
                     tpp_spike_trains)
from .graph import (ActivationSpec, Layer, ModelGraph, StructureError,
                    TrainingError, accuracy, ann_forward, eval_activation,
                    fold_batchnorm, make_mlp, train_toy_mlp)
from .metrics import (SpikeReport, SweepConfig, count_spikes,
                      histogram_membrane, sweep_accuracy,
                      sweep_anytime_accuracy)
from .model_io import (ChecksumError, DatasetHandle, FormatError,
                       VersionError, load_digits_dataset, load_idx,
                       read_weights, synth_dataset, write_csv,
                       write_json_report, write_weights)
from .suites import run_suite
from .tensor import DimensionError, NonFiniteError
from .theory import (CheckReport, OutcomeDistribution, check_permutation_theorem,
                     check_rate_identity, check_thm1a, check_thm1b, check_thm1c,
                     check_thm1d, enumerate_tpp, infinity_norm, is_clamp_free)

__version__ = "0.1.0"
