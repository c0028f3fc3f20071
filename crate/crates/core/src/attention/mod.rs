//! The representative-attention layer: projections, gather, latent
//! interaction, distribution and the depth-wise local bypass.

mod config;
mod forward;
mod params;

pub use config::{AttnConfig, Precision, Routing};
pub use forward::{
    bypass_from_values, distribute_global, gather_assign, gather_latents, latent_interact, local_bypass,
    mass_normalize, project_qkv, route, rpattention_forward, ForwardTrace, Latents,
};
pub use params::{init_params, param_count, RPAttnParams, PARAM_NAMES};
