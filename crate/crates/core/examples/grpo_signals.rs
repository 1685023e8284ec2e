//! Group advantages, dynamic filtering and the clipped surrogate on hand-made inputs.
use tooltrain::grpo::{clipped_surrogate, group_advantages, GrpoError};

fn main() -> Result<(), GrpoError> {
    for rewards in [[1.0, 0.0, 0.0, 1.0], [1.0, 0.0, 0.0, 0.0]] {
        let (mu, sigma, adv) = group_advantages(&rewards)?;
        println!("{rewards:?}: mu {mu:.4} sigma {sigma:.4} advantages {adv:.4?}");
    }
    println!("[1,1,1,1]: {:?}", group_advantages(&[1.0; 4]).unwrap_err());
    for (ratio, adv) in [(1.5, 1.0), (0.5, -1.0), (1.0, 0.7)] {
        println!("surrogate(ratio {ratio}, A {adv}) = {}", clipped_surrogate(ratio, adv, 0.2));
    }
    Ok(())
}
