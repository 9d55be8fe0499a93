use std::collections::BTreeSet;

use ficbl::concept::{empirical_joint, enumerate_combinations, restrict_combinations, ConceptSchema, ConceptVector};
use ficbl::dataset::{extract_patches, invert_labels, Dataset, GrayImage, ImageRecord, PatchConfig};
use ficbl::rules::{parse_rule, RuleExpr};
use proptest::prelude::*;

fn cards() -> impl Strategy<Value = Vec<u16>> {
    prop::collection::vec(2u16..=4, 1..=4)
}

fn schema_of(cards: &[u16]) -> ConceptSchema {
    ConceptSchema::from_pairs(cards.iter().enumerate().map(|(i, &c)| (format!("c{i}name"), c))).unwrap()
}

proptest! {
    #[test]
    fn combinations_cover_the_product(cards in cards()) {
        let s = schema_of(&cards);
        let all = enumerate_combinations(&s);
        let product: usize = cards.iter().map(|&c| c as usize).product();
        prop_assert_eq!(all.len(), product);
        let distinct: BTreeSet<_> = all.iter().cloned().collect();
        prop_assert_eq!(distinct.len(), product);
        for z in &all {
            for (r, &v) in z.values().iter().enumerate() {
                prop_assert!(v >= 1 && v <= cards[r]);
            }
        }
    }

    #[test]
    fn restrictions_partition_the_product(cards in cards(), pick in any::<prop::sample::Index>()) {
        let s = schema_of(&cards);
        let r = pick.index(cards.len());
        let mut seen = BTreeSet::new();
        for v in 1..=cards[r] {
            let part = restrict_combinations(&s, r, v).unwrap();
            prop_assert_eq!(part.len() * cards[r] as usize, enumerate_combinations(&s).len());
            for z in part {
                prop_assert_eq!(z.get(r), v);
                prop_assert!(seen.insert(z));
            }
        }
        prop_assert_eq!(seen.len(), enumerate_combinations(&s).len());
        prop_assert!(restrict_combinations(&s, r, cards[r] + 1).is_err());
    }

    #[test]
    fn empirical_joint_is_a_distribution(cards in cards(), raw in prop::collection::vec(prop::collection::vec(0u16..4, 4), 1..20)) {
        let s = schema_of(&cards);
        let labels: Vec<ConceptVector> = raw
            .iter()
            .map(|row| ConceptVector::full(&s, &cards.iter().zip(row).map(|(&c, &x)| x % c + 1).collect::<Vec<_>>()).unwrap())
            .collect();
        let joint = empirical_joint(&labels, &s).unwrap();
        prop_assert_eq!(joint.total(), labels.len() as u64);
        let sum: f64 = joint.iter().map(|(_, p)| p).sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        for (z, _) in joint.iter() {
            let hits = labels.iter().filter(|l| l.as_combination().as_ref() == Some(z)).count() as u64;
            prop_assert_eq!(joint.count(z), hits);
        }
    }

    #[test]
    fn patches_are_the_windows_they_claim(
        w in 1usize..12, h in 1usize..12,
        pw in 1usize..6, ph in 1usize..6,
        sx in 1usize..5, sy in 1usize..5,
    ) {
        prop_assume!(pw <= w && ph <= h);
        let img = GrayImage::new(w, h, (0..w * h).map(|i| i as f64 / (w * h) as f64).collect()).unwrap();
        let cfg = PatchConfig { patch_w: pw, patch_h: ph, stride_x: sx, stride_y: sy };
        let patches = extract_patches(0, &img, &cfg).unwrap();
        prop_assert_eq!(patches.len(), ((w - pw) / sx + 1) * ((h - ph) / sy + 1));
        prop_assert_eq!(patches.len(), cfg.patches_per_image(w, h).unwrap());
        for (k, p) in patches.iter().enumerate() {
            prop_assert_eq!(p.index, k);
            prop_assert_eq!(p.pixels.len(), pw * ph);
            for dy in 0..ph {
                for dx in 0..pw {
                    prop_assert_eq!(p.pixels[dy * pw + dx], img.pixels[(p.y + dy) * w + p.x + dx]);
                }
            }
        }
    }

    #[test]
    fn grid_patches_tile_the_image(cols in 1usize..5, rows in 1usize..5, size in 1usize..5) {
        let (w, h) = (cols * size, rows * size);
        let img = GrayImage::new(w, h, (0..w * h).map(|i| (i % 7) as f64 / 7.0).collect()).unwrap();
        let patches = extract_patches(3, &img, &PatchConfig::square(size)).unwrap();
        let mut rebuilt = GrayImage::blank(w, h);
        for p in &patches {
            prop_assert_eq!(p.image, 3);
            rebuilt.paste(&GrayImage::new(size, size, p.pixels.clone()).unwrap(), p.x, p.y);
        }
        prop_assert_eq!(rebuilt, img);
    }
}

fn binary_dataset(targets: &[u16], other: &[u16]) -> Dataset {
    let schema = ConceptSchema::from_pairs([("target", 2), ("flag", 2)]).unwrap();
    let records = targets
        .iter()
        .zip(other)
        .map(|(&t, &o)| ImageRecord {
            image: GrayImage::blank(1, 1),
            label: ConceptVector::full(&schema, &[t, o]).unwrap(),
        })
        .collect();
    Dataset { schema, records }
}

proptest! {
    #[test]
    fn inversion_flips_exactly_the_requested_share(
        rows in prop::collection::vec((1u16..=2, 1u16..=2), 1..60),
        beta in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let (t, o): (Vec<u16>, Vec<u16>) = rows.into_iter().unzip();
        let ds = binary_dataset(&t, &o);
        let inv = invert_labels(&ds, &RuleExpr::tautology(), beta, seed).unwrap();
        let want = ((beta * ds.len() as f64) + 1e-9).floor() as usize;
        prop_assert_eq!(inv.flipped.len(), want.min(ds.len()));
        for (i, (a, b)) in ds.records.iter().zip(&inv.dataset.records).enumerate() {
            let flipped = inv.flipped.contains(&i);
            prop_assert_eq!(a.label.get(0) != b.label.get(0), flipped);
            prop_assert_eq!(a.label.get(1), b.label.get(1));
        }
    }

    #[test]
    fn rule_guided_inversion_only_touches_satisfying_instances(
        rows in prop::collection::vec((1u16..=2, 1u16..=2), 1..60),
        beta in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let (t, o): (Vec<u16>, Vec<u16>) = rows.into_iter().unzip();
        let ds = binary_dataset(&t, &o);
        let rule = parse_rule("flag=2 -> target=1", &ds.schema).unwrap();
        let inv = invert_labels(&ds, &rule, beta, seed).unwrap();
        for &i in &inv.flipped {
            let before = ds.records[i].label.as_combination().unwrap();
            let after = inv.dataset.records[i].label.as_combination().unwrap();
            prop_assert!(rule.eval(&before));
            prop_assert!(!rule.eval(&after));
        }
        // a larger β flips a superset
        let more = invert_labels(&ds, &rule, (beta + 0.2).min(1.0), seed).unwrap();
        prop_assert!(inv.flipped.iter().all(|i| more.flipped.contains(i)));
    }
}
