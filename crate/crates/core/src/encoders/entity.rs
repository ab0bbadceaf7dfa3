use ndarray::{s, Array1, ArrayView1};

use crate::error::{Error, Result};

/// Component-wise mean of the mention's token vectors.
pub fn encode_entity(vectors: &[ArrayView1<f64>]) -> Result<Array1<f64>> {
    let Some(first) = vectors.first() else {
        return Err(Error::Empty("entity mention has no tokens".into()));
    };
    let mut sum = Array1::zeros(first.len());
    for v in vectors {
        if v.len() != sum.len() {
            return Err(Error::Shape("entity token vectors differ in length".into()));
        }
        sum += v;
    }
    Ok(sum / vectors.len() as f64)
}

/// `φ(e, x) = [f(e); g_s; g_d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub entity: Array1<f64>,
    pub sentence: Array1<f64>,
    pub document: Array1<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.entity.len() + self.sentence.len() + self.document.len()
    }

    pub fn concat(&self) -> Array1<f64> {
        let (a, b) = (self.entity.len(), self.sentence.len());
        let mut out = Array1::zeros(self.dim());
        out.slice_mut(s![..a]).assign(&self.entity);
        out.slice_mut(s![a..a + b]).assign(&self.sentence);
        out.slice_mut(s![a + b..]).assign(&self.document);
        out
    }

    pub fn is_finite(&self) -> bool {
        [&self.entity, &self.sentence, &self.document]
            .iter()
            .all(|v| crate::math::is_finite(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn averages() {
        let v = array![1.0, -2.0, 3.0];
        assert_eq!(encode_entity(&[v.view()]).unwrap(), v);
        let u = array![3.0, 0.0, -1.0];
        assert_eq!(encode_entity(&[u.view(), v.view()]).unwrap(), array![2.0, -1.0, 1.0]);
        assert_eq!(
            encode_entity(&[u.view(), v.view()]).unwrap(),
            encode_entity(&[v.view(), u.view()]).unwrap()
        );
        assert!(encode_entity(&[]).is_err());
    }

    #[test]
    fn concatenation_order() {
        let f = FeatureVector {
            entity: array![1.0, 2.0],
            sentence: array![3.0],
            document: array![4.0, 5.0],
        };
        assert_eq!(f.concat(), array![1.0, 2.0, 3.0, 4.0, 5.0]);
    }
}
