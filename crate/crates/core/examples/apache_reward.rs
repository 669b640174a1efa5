//! Score patients with the modified APACHE II and derive intermediate and
//! terminal rewards.

use ventrl::mdp::{apache_score, reward, ApacheInput, RewardConfig, SignConvention};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let healthy = ApacheInput {
        temperature: 37.0,
        mean_bp: 90.0,
        heart_rate: 80.0,
        arterial_ph: 7.40,
        sodium: 140.0,
        potassium: 4.0,
        creatinine: 1.0,
        wbc: 8.0,
        gcs: 15,
    };
    let sick = ApacheInput {
        temperature: 39.5,
        mean_bp: 55.0,
        heart_rate: 145.0,
        arterial_ph: 7.28,
        sodium: 152.0,
        potassium: 5.6,
        creatinine: 2.4,
        wbc: 22.0,
        gcs: 9,
    };
    let recovering = ApacheInput {
        heart_rate: 105.0,
        mean_bp: 68.0,
        gcs: 13,
        ..sick
    };
    for (name, p) in [("healthy", &healthy), ("sick", &sick), ("recovering", &recovering)] {
        println!("{name:<11} score {}", apache_score(p)?);
    }

    let cfg = RewardConfig::default();
    println!("sick -> recovering: {:+.4}", reward(Some(&sick), Some(&recovering), false, true, &cfg)?);
    println!("recovering -> sick: {:+.4}", reward(Some(&recovering), Some(&sick), false, true, &cfg)?);
    let literal = RewardConfig {
        sign_convention: SignConvention::PaperLiteral,
        ..cfg.clone()
    };
    println!(
        "sick -> recovering, literal sign: {:+.4}",
        reward(Some(&sick), Some(&recovering), false, true, &literal)?
    );
    let unshaped = RewardConfig {
        shaping_enabled: false,
        ..cfg.clone()
    };
    println!("shaping disabled: {:+.4}", reward(Some(&sick), Some(&recovering), false, true, &unshaped)?);
    println!("terminal, survived: {:+.1}", reward(None, None, true, true, &cfg)?);
    println!("terminal, died:     {:+.1}", reward(None, None, true, false, &cfg)?);
    Ok(())
}
