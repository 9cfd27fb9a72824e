"""Spiking residual networks trained with surrogate-gradient BPTT, in numpy."""

from .analyze import ActivityRecord, activity_map, export_csv, gamma_map, read_csv
from .data import Dataset, load_checkpoint, read_cifar_binary, read_event_csv, save_checkpoint, synth_dataset
from .encode import Event, augment, direct_encode, events_to_frames, normalize, poisson_encode
from .layers import Bntt, OutputAccumulator, boosting_forward, bntt_forward, spiking_conv_block
from .network import Network, NetworkSpec, build_sresnet, build_svgg, count_parameters, forward, inference_early_stop
from .neuron import LifParams, LifState, PlifParam, heaviside, lif_step, soft_spike, surrogate_grad
from .optim import SGD, MultiStepSchedule
from .residual import ConnectionMode, Mode
from .tensor import Tape, Tensor, backward, finite_diff_gradcheck
from .train import TrainConfig, TrainReport, bptt_step, evaluate, fine_tune, fit

__version__ = "0.1.0"
