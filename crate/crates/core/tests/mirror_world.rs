use nmf_core::distributed::{Allreduce, DbcdWorker, DidWorker};
use nmf_core::kernels::{bcd_iterate, FactorState};
use nmf_core::{ColumnBlock, DenseMatrix, Error};

/// Pretends to be `copies` ranks that all hold the same block: the sum over
/// ranks is the local payload times `copies`.
struct MirrorWorld {
    copies: usize,
    calls: usize,
}

impl Allreduce for MirrorWorld {
    type Error = Error;

    fn rank(&self) -> usize {
        0
    }

    fn size(&self) -> usize {
        self.copies
    }

    fn allreduce_sum(&mut self, payload: &mut [DenseMatrix]) -> Result<(), Error> {
        for m in payload {
            m.scale(self.copies as f64);
        }
        self.calls += 1;
        Ok(())
    }
}

fn data(rows: usize, cols: usize, mut s: u64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64
    })
}

#[test]
fn mirrored_blocks_match_bcd_on_repeated_data() {
    let x = data(4, 15, 1);
    let b0 = data(4, 3, 2);
    let c0 = data(3, 15, 3);
    let twice = |m: &DenseMatrix| DenseMatrix::hstack(&[m.clone(), m.clone()]).unwrap();
    let mut seq = FactorState::new(&twice(&x), b0.clone(), twice(&c0)).unwrap();

    let block = ColumnBlock::for_rank(&x, &c0, 0, 1).unwrap();
    let mut did = DidWorker::new(block.clone());
    let mut dbcd = DbcdWorker::new(block, &b0).unwrap();
    let (mut b_did, mut b_dbcd) = (b0.clone(), b0);
    let mut world = MirrorWorld { copies: 2, calls: 0 };

    for _ in 0..30 {
        bcd_iterate(&twice(&x), &mut seq).unwrap();
        did.iterate(&mut world, &mut b_did).unwrap();
        dbcd.iterate(&mut world, &mut b_dbcd).unwrap();
        for b in [&b_did, &b_dbcd] {
            let diff = b.sub(&seq.b).unwrap().max_abs();
            assert!(diff <= 1e-12 * seq.b.max_abs(), "B drifted by {diff:e}");
        }
        let c_diff = dbcd.block.c_block.sub(&seq.c.column_range(0..15)).unwrap().max_abs();
        assert!(c_diff <= 1e-12, "C drifted by {c_diff:e}");
    }
    assert_eq!(world.calls, 30 * (1 + 3));
}
