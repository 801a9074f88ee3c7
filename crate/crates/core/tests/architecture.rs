mod common;

use attn_gan::generator::GeneratorSpec;

#[test]
fn generator_shapes_and_parameter_counts() {
    common::architecture().unwrap();
}

#[test]
fn desk_scale_shapes_follow_the_same_sequence() {
    let spec = GeneratorSpec::standard(0.5, true);
    assert_eq!(spec.feature_shapes(64, 64), common::hand_shapes(64, 32));
}

#[test]
fn no_attention_head_differs_by_one_output_channel() {
    use attn_gan::generator::Generator;
    use rand::SeedableRng;
    let mk = |att| {
        Generator::<f32>::new(GeneratorSpec::standard(0.25, att), &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))
            .unwrap()
            .count_parameters()
    };
    // last stage has 16 channels at this scale; one more 7x7 output filter plus its bias
    assert_eq!(mk(true) - mk(false), 16 * 49 + 1);
}
