use meldiff::config::ExperimentConfig;

/// Small enough to train for a few dozen steps inside a unit-test budget.
pub fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::toy_unet();
    c.unet.base_model_dimension = 32;
    c.unet.timestep_dimension = 8;
    c.unet.number_of_attention_heads = 2;
    c.unet.blocks_per_resolution = vec![1, 1, 1];
    c.data.batch_size = 2;
    c.data.audio_length = c.transforms.hop_length * 15;
    c.vocoder.model_dimension = 32;
    c.diffusion.number_of_sampling_steps = 8;
    c.transforms.griffin_lim_iterations = 8;
    c
}
