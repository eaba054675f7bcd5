//! Consumers of a finished highlight: transfer to other meshings,
//! geometric edits, compositing and multi-class segmentation.

mod edit;
mod maxflow;
mod segment;

use crate::error::{Error, Result};
use crate::field::HighlighterField;
use crate::mesh::{Mesh, NormalizationTransform};
use crate::result::Provenance;

pub use crate::result::{mask_iou, threshold_mask, HighlightResult, MASK_THRESHOLD};
pub use edit::{apply_edit, delete_region, extrude_region, select_region, stretch_region, EditKind, EditOutput, EditSpec};
pub use maxflow::FlowGraph;
pub use segment::{
    brute_force_minimum, multiclass_segment, SegmentationProblem, SegmentationResult, EPSILON as SEGMENT_EPSILON,
    MAX_CLASSES, PALETTE,
};

/// Targets whose normalized vertices reach beyond this radius are flagged:
/// the field was only trained inside the unit ball.
pub const EXTRAPOLATION_RADIUS: f64 = 1.5;

#[derive(Clone, Debug, PartialEq)]
pub struct Transfer {
    pub result: HighlightResult,
    /// Largest vertex norm after applying the transform.
    pub max_radius: f64,
    pub extrapolated: bool,
}

/// Evaluates a trained field on another meshing of the same object. The
/// target is mapped with the transform recorded for the source mesh.
pub fn transfer_localization(
    field: &HighlighterField,
    target: &Mesh,
    transform: &NormalizationTransform,
    provenance: Provenance,
) -> Result<Transfer> {
    let moved = target.transformed(transform);
    let probabilities = field.highlight_probabilities(&moved.vertices)?;
    let max_radius = moved.max_radius();
    Ok(Transfer {
        result: HighlightResult::new(probabilities, *transform, provenance),
        max_radius,
        extrapolated: max_radius > EXTRAPOLATION_RADIUS,
    })
}

/// Per vertex, the attributes of the most probable layer above the mask
/// threshold (earliest layer on ties), otherwise the base attributes.
pub fn composite_stylizations<T: Clone>(base: &[T], layers: &[(&[T], &HighlightResult)]) -> Result<Vec<T>> {
    let n = base.len();
    for (attrs, r) in layers {
        for (what, len) in [("layer attributes", attrs.len()), ("layer probabilities", r.probabilities.len())] {
            if len != n {
                return Err(Error::LengthMismatch {
                    what,
                    expected: n,
                    actual: len,
                });
            }
        }
    }
    Ok((0..n)
        .map(|v| {
            let mut best: Option<(usize, f64)> = None;
            for (li, (_, r)) in layers.iter().enumerate() {
                let p = r.probabilities[v];
                if p > MASK_THRESHOLD && best.is_none_or(|(_, b)| p > b) {
                    best = Some((li, p));
                }
            }
            match best {
                Some((li, _)) => layers[li].0[v].clone(),
                None => base[v].clone(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{init_field, FieldConfig};
    use crate::mesh::{midpoint_subdivide, primitives};

    fn result(p: &[f64]) -> HighlightResult {
        HighlightResult::new(p.to_vec(), NormalizationTransform::identity(), Provenance::default())
    }

    #[test]
    fn transfer_to_same_and_subdivided_mesh() {
        let field = init_field(&FieldConfig { width: 32, ..Default::default() }).unwrap();
        let mesh = primitives::icosphere(1);
        let t = NormalizationTransform::identity();
        let base = field.highlight_probabilities(&mesh.vertices).unwrap();
        let same = transfer_localization(&field, &mesh, &t, Provenance::default()).unwrap();
        assert_eq!(same.result.probabilities, base);
        assert!(!same.extrapolated);
        let sub = transfer_localization(&field, &midpoint_subdivide(&mesh), &t, Provenance::default()).unwrap();
        assert_eq!(&sub.result.probabilities[..mesh.vertex_count()], &base[..]);
    }

    #[test]
    fn transfer_flags_far_targets() {
        let field = init_field(&FieldConfig { width: 8, depth: 2, ..Default::default() }).unwrap();
        let mesh = primitives::icosphere(0);
        let t = NormalizationTransform { translation: [0.0; 3], scale: 2.0 };
        assert!(transfer_localization(&field, &mesh, &t, Provenance::default()).unwrap().extrapolated);
    }

    #[test]
    fn composite_rules() {
        let base = ["b"; 4];
        assert_eq!(composite_stylizations(&base, &[]).unwrap(), base);
        let a = ["a"; 4];
        let all = result(&[1.0; 4]);
        assert_eq!(composite_stylizations(&base, &[(&a, &all)]).unwrap(), a);

        let c = ["c"; 4];
        let ra = result(&[0.9, 0.6, 0.2, 0.7]);
        let rc = result(&[0.1, 0.8, 0.4, 0.7]);
        let out = composite_stylizations(&base, &[(&a, &ra), (&c, &rc)]).unwrap();
        assert_eq!(out, ["a", "c", "b", "a"]);
        // Idempotent.
        assert_eq!(composite_stylizations(&out, &[(&a, &ra), (&c, &rc)]).unwrap(), out);
        assert!(composite_stylizations(&base, &[(&a[..3], &ra)]).is_err());
    }
}
