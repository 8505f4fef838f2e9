mod gen;

use molrag_core::smiles::{is_valid_smiles, molecules_equal, parse_smiles, write_smiles, write_smiles_with_ranks};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn parser_is_total(s in "\\PC{0,40}") {
        let _ = parse_smiles(&s);
        let _ = is_valid_smiles(&s);
    }

    #[test]
    fn parser_is_total_on_smiles_alphabet(s in "[CNOSPFIBrcnosp0-9()\\[\\]=#$:/\\\\@+%.*H-]{0,40}") {
        let _ = parse_smiles(&s);
    }

    #[test]
    fn write_then_parse_round_trips(m in gen::molecule(24)) {
        let text = write_smiles(&m);
        let back = parse_smiles(&text).map_err(|e| TestCaseError::fail(format!("{text}: {e}")))?;
        prop_assert!(molecules_equal(&m, &back), "{}", text);
    }

    #[test]
    fn any_traversal_order_round_trips((m, ranks) in gen::molecule_and_permutation(24)) {
        let text = write_smiles_with_ranks(&m, &ranks);
        let back = parse_smiles(&text).map_err(|e| TestCaseError::fail(format!("{text}: {e}")))?;
        prop_assert!(molecules_equal(&m, &back), "{}", text);
    }

    #[test]
    fn canonical_text_is_a_fixed_point(m in gen::molecule(20)) {
        let once = write_smiles(&m);
        let twice = write_smiles(&parse_smiles(&once).unwrap());
        prop_assert_eq!(once, twice);
    }
}
