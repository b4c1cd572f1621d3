//! Dense little-endian f32 matrices as raw bytes.

pub fn encode_f32(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_f32(bytes: &[u8]) -> Option<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return None;
    }
    Some(
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    #[test]
    fn round_trip_is_bit_exact() {
        let xs = [0.0f32, -0.0, 1.5, f32::MIN_POSITIVE, -3.25e-7];
        let back = super::decode_f32(&super::encode_f32(&xs)).unwrap();
        assert!(xs
            .iter()
            .zip(&back)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(super::decode_f32(&[1, 2, 3]).is_none());
    }
}
