use std::path::Path;

use proptest::prelude::*;
use splatforge::ledger::{canonical_json, decode_csv, encode_csv, StageLedger};
use splatforge::ply::{encode_cloud, parse_vertices, table_to_cloud, Encoding};
use splatforge_core::{ColorRgb, Point3, PointCloud};

fn cloud() -> impl Strategy<Value = PointCloud> {
    (1usize..40, any::<bool>(), any::<bool>()).prop_flat_map(|(n, colored, normals)| {
        (
            prop::collection::vec((-1e4..1e4f64, -1e4..1e4f64, -1e4..1e4f64), n),
            prop::collection::vec(any::<[u8; 3]>(), n),
            prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64, 0.1..1.0f64), n),
        )
            .prop_map(move |(p, c, nm)| {
                let mut cloud = PointCloud::new(p.into_iter().map(|(x, y, z)| Point3::new(x, y, z)).collect());
                if colored {
                    cloud.colors = Some(c.into_iter().map(ColorRgb::from_u8).collect());
                }
                if normals {
                    cloud.normals = Some(nm.into_iter().map(|(x, y, z)| Point3::new(x, y, z).normalize()).collect());
                }
                cloud
            })
    })
}

fn decode(bytes: &[u8]) -> PointCloud {
    let p = Path::new("<mem>");
    table_to_cloud(&parse_vertices(bytes, p).unwrap(), p).unwrap()
}

proptest! {
    #[test]
    fn ply_round_trip_is_exact(c in cloud(), ascii in any::<bool>()) {
        let enc = if ascii { Encoding::Ascii } else { Encoding::BinaryLittleEndian };
        let bytes = encode_cloud(&c, enc);
        let back = decode(&bytes);
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(encode_cloud(&back, enc), bytes);
    }

    #[test]
    fn ledger_serializations_are_fixpoints(
        metrics in prop::collection::btree_map("[a-z_]{1,12}", -1e9..1e9f64, 0..12),
        text in "[ -~]{0,24}",
        seed in any::<u64>(),
    ) {
        let mut l = StageLedger::new("prism", seed, "0011223344556677");
        for (k, v) in &metrics {
            l.metric(k, *v);
        }
        l.param("note", text.as_str());
        let json = canonical_json(&l).unwrap();
        let back: StageLedger = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(&back, &l);
        prop_assert_eq!(canonical_json(&back).unwrap(), json);
        let row = l.flatten();
        prop_assert_eq!(decode_csv(&encode_csv(&row).unwrap()).unwrap(), row);
    }
}
