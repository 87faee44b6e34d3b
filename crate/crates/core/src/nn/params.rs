use serde::{Deserialize, Serialize};

use super::{Layout, Mlp};
use crate::{Error, Result};

/// Parameters of one or more networks laid end to end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub layouts: Vec<Vec<usize>>,
    pub flat: Vec<f64>,
}

impl ParamVector {
    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.layouts == other.layouts && self.flat.len() == other.flat.len()
    }
}

pub fn flatten(nets: &[&Mlp]) -> ParamVector {
    ParamVector {
        layouts: nets.iter().map(|n| n.layout().sizes().to_vec()).collect(),
        flat: nets.iter().flat_map(|n| n.params().iter().copied()).collect(),
    }
}

pub fn unflatten(vector: &ParamVector) -> Result<Vec<Mlp>> {
    let mut at = 0;
    let mut nets = Vec::with_capacity(vector.layouts.len());
    for sizes in &vector.layouts {
        let layout = Layout::new(sizes.clone())?;
        let n = layout.n_params();
        let slice = vector
            .flat
            .get(at..at + n)
            .ok_or_else(|| Error::LayoutMismatch("parameter vector shorter than its layout".into()))?;
        nets.push(Mlp::from_params(layout, slice.to_vec())?);
        at += n;
    }
    if at != vector.flat.len() {
        return Err(Error::LayoutMismatch(format!(
            "parameter vector has {} values, layout needs {at}",
            vector.flat.len()
        )));
    }
    Ok(nets)
}

/// Copies a flat vector back into existing networks of matching layout.
pub fn load_into(vector: &ParamVector, nets: &mut [&mut Mlp]) -> Result<()> {
    let expected = flatten(&nets.iter().map(|n| &**n).collect::<Vec<_>>());
    if !expected.same_layout(vector) {
        return Err(Error::LayoutMismatch(format!(
            "expected layouts {:?}, got {:?}",
            expected.layouts, vector.layouts
        )));
    }
    let mut at = 0;
    for net in nets.iter_mut() {
        let n = net.params().len();
        net.params_mut().copy_from_slice(&vector.flat[at..at + n]);
        at += n;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nets() -> (Mlp, Mlp) {
        let mut rng = crate::seeded_rng(5);
        (
            Mlp::new(Layout::new(vec![3, 4, 2]).unwrap(), 1.0, &mut rng),
            Mlp::new(Layout::new(vec![5, 1]).unwrap(), 1.0, &mut rng),
        )
    }

    #[test]
    fn round_trip_is_identity() {
        let (a, b) = nets();
        let v = flatten(&[&a, &b]);
        assert_eq!(v.len(), 26 + 6);
        let back = unflatten(&v).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn averaged_vector_is_parameterwise_average() {
        let (a, _) = nets();
        let mut rng = crate::seeded_rng(6);
        let c = Mlp::new(a.layout().clone(), 1.0, &mut rng);
        let (va, vc) = (flatten(&[&a]), flatten(&[&c]));
        let mean = ParamVector {
            layouts: va.layouts.clone(),
            flat: va.flat.iter().zip(&vc.flat).map(|(x, y)| 0.5 * (x + y)).collect(),
        };
        let net = unflatten(&mean).unwrap().remove(0);
        for ((m, x), y) in net.params().iter().zip(a.params()).zip(c.params()) {
            assert_eq!(*m, 0.5 * (x + y));
        }
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let (mut a, b) = nets();
        let mut v = flatten(&[&a, &b]);
        v.flat.pop();
        assert!(unflatten(&v).is_err());
        assert!(load_into(&flatten(&[&b]), &mut [&mut a]).is_err());
    }
}
