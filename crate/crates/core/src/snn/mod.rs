//! PLIF spiking network with per-step MC-dropout and a readout integrator,
//! trained by backpropagation through time with an arctan surrogate.

pub mod checkpoint;
mod layers;
mod network;

pub use layers::{
    logit, sigmoid, surrogate_grad, surrogate_spike, DropoutPlan, PlifLayer, PlifStep, ReadoutLayer, ReadoutLeak,
    SpikeMode, SURROGATE_ALPHA,
};
pub use network::{
    NetForwardTrace, NetShape, Network, StepRecord, INPUT_BIAS, INPUT_WEIGHT, LEAK_PARAM, READOUT_BIAS, READOUT_WEIGHT,
    TAU_PARAM,
};
