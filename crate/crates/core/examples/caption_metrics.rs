//! Caption metrics on template captions, including the reference
//! round-robin that estimates agreement between references.
//!
//! `cargo run --example caption_metrics`

use audiotext::evalsuite::{bleu4_text, cider_text, rouge_l_text, round_robin_eval};
use audiotext::toygen::{alternate_captions, default_registry, plan_scene, SceneConfig};

fn main() -> audiotext::Result<()> {
    let registry = default_registry();
    let scenes: [&[&str]; 4] = [&["falling_whistle", "low_rumble"], &["low_tone"], &["high_tone", "white_noise", "slow_pulsing"], &["deep_buzz", "harsh_beep"]];
    let mut references = Vec::new();
    for (i, events) in scenes.iter().enumerate() {
        let recipe = plan_scene(&registry, events, &SceneConfig::default(), i as u64)?;
        references.push(alternate_captions(&registry, &recipe, 100 + i as u64, 5)?);
    }
    let candidates: Vec<String> = vec![
        references[0][0].clone(),
        "a low tone".into(),
        "a high tone rings then white noise hisses".into(),
        "a harsh beep blares".into(),
    ];
    for (c, r) in candidates.iter().zip(&references) {
        println!("candidate: {c}\n  refs: {r:?}");
    }
    println!("BLEU-4  {:.4}", bleu4_text(&candidates, &references)?);
    println!("ROUGE-L {:.4}", rouge_l_text(&candidates, &references)?);
    println!("CIDEr   {:.4}", cider_text(&candidates, &references)?);
    println!("reference round-robin:");
    println!("  BLEU-4  {:.4}", round_robin_eval(&references, &bleu4_text)?);
    println!("  ROUGE-L {:.4}", round_robin_eval(&references, &rouge_l_text)?);
    println!("  CIDEr   {:.4}", round_robin_eval(&references, &cider_text)?);
    Ok(())
}
