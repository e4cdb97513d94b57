//! Hard and sampled quantization with the straight-through gradient and
//! the commitment term.

use vq_em::bottleneck;
use vq_em::{Codebook, DataMatrix, Matrix};

fn main() -> vq_em::Result<()> {
    let cb = Codebook::from_parts(2, 2, vec![0.0, 0.0, 2.0, 2.0], vec![1.0; 2])?;
    let z_e = DataMatrix::from_rows(&[[0.3, -0.1], [1.8, 2.4]])?;

    let hard = bottleneck::quantize_hard(&z_e, &cb, 0.25)?;
    println!("codes {:?}", hard.assignments.codes());
    println!("quantized {:?}", hard.quantized.as_slice());
    println!("commitment loss (beta 0.25) {:.4}", hard.commitment_loss);

    let upstream = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]])?;
    let grad = bottleneck::backward(&upstream, &hard, &z_e)?;
    println!("upstream {:?}", upstream.as_slice());
    println!("encoder gradient {:?}", grad.as_slice());

    let soft = bottleneck::quantize_soft(&z_e, &cb, 10, 3, 0.25)?;
    println!("sampled codes {:?}", soft.assignments.codes());
    println!("averaged quantized {:?}", soft.quantized.as_slice());
    Ok(())
}
