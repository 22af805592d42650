use std::collections::{BTreeSet, HashSet, VecDeque};

use super::{Code, CodeHierarchy, KbError};

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum Node<'a> {
    /// Virtual node joining all roots, so codes in different chapters are
    /// still connected (root-to-root distance 2).
    Top,
    Code(&'a Code),
}

impl CodeHierarchy {
    /// The covered code closest to `target` by unweighted tree distance;
    /// ties go to the lexicographically smallest code.
    ///
    /// Breadth-first search over parent/child links plus a virtual node above
    /// all roots. Covered codes missing from the hierarchy are unreachable and
    /// ignored. A target that is itself covered is returned as-is.
    pub fn nearest_code(&self, target: &str, covered: &BTreeSet<Code>) -> Result<Code, KbError> {
        let Some(start) = self.get(target).map(|r| &r.code) else {
            return Err(KbError::UnknownCode(
                Code::parse(target).map_err(KbError::Shape)?,
            ));
        };
        if covered.is_empty() {
            return Err(KbError::NoCandidates);
        }
        let mut seen: HashSet<Node<'_>> = HashSet::new();
        let mut frontier = VecDeque::from([Node::Code(start)]);
        seen.insert(Node::Code(start));
        while !frontier.is_empty() {
            // `covered` is sorted, so the first hit per layer wins ties.
            let best = frontier
                .iter()
                .filter_map(|n| match n {
                    Node::Code(c) if covered.contains(*c) => Some(*c),
                    _ => None,
                })
                .min();
            if let Some(code) = best {
                return Ok(code.clone());
            }
            let mut next = VecDeque::new();
            for node in frontier {
                for neighbour in self.neighbours(node) {
                    if seen.insert(neighbour) {
                        next.push_back(neighbour);
                    }
                }
            }
            frontier = next;
        }
        Err(KbError::NoCandidates)
    }

    fn neighbours<'a>(&'a self, node: Node<'a>) -> Vec<Node<'a>> {
        match node {
            Node::Top => self.roots().iter().map(Node::Code).collect(),
            Node::Code(code) => {
                let mut out: Vec<Node<'a>> =
                    self.children(code.as_str()).iter().map(Node::Code).collect();
                match self.parent(code.as_str()) {
                    Some(parent) => out.push(Node::Code(parent)),
                    None => out.push(Node::Top),
                }
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{parse_order_file, render_order_line};
    use super::*;

    fn hierarchy(codes: &[&str]) -> CodeHierarchy {
        let content: Vec<String> = codes
            .iter()
            .enumerate()
            .map(|(i, c)| render_order_line(i as u32 + 1, c, c.len() > 4, c, c))
            .collect();
        parse_order_file(&content.join("\n")).unwrap()
    }

    fn set(codes: &[&str]) -> BTreeSet<Code> {
        codes.iter().map(|c| Code::parse(c).unwrap()).collect()
    }

    /// Distance via lowest common ancestor on explicit ancestor chains, with
    /// an implicit super-root above all roots.
    fn lca_distance(h: &CodeHierarchy, a: &str, b: &str) -> usize {
        let chain = |c: &str| -> Vec<String> {
            let mut v = vec![c.to_string()];
            v.extend(h.ancestors(c).iter().map(|x| x.to_string()));
            v
        };
        let ca = chain(a);
        let cb = chain(b);
        for (i, x) in ca.iter().enumerate() {
            if let Some(j) = cb.iter().position(|y| y == x) {
                return i + j;
            }
        }
        ca.len() + cb.len()
    }

    #[test]
    fn sibling_is_found() {
        let h = hierarchy(&["I25", "I251", "I2510", "I2511"]);
        assert_eq!(h.nearest_code("I25.11", &set(&["I25.10"])).unwrap().as_str(), "I25.10");
    }

    #[test]
    fn equidistant_siblings_tie_break_lexicographically() {
        let h = hierarchy(&["I25", "I251", "I2510", "I2511", "I2512"]);
        assert_eq!(
            h.nearest_code("I25.11", &set(&["I25.12", "I25.10"])).unwrap().as_str(),
            "I25.10"
        );
    }

    #[test]
    fn crosses_chapters_through_virtual_root() {
        let h = hierarchy(&["I25", "I251", "I2510", "J44", "J449"]);
        assert_eq!(h.nearest_code("J44.9", &set(&["I25.10"])).unwrap().as_str(), "I25.10");
        assert_eq!(lca_distance(&h, "J44.9", "I25.10"), 5);
    }

    #[test]
    fn parent_beats_cousin() {
        let h = hierarchy(&["I25", "I251", "I2510", "I2511", "I252"]);
        // I25.1 at distance 1, I25.2 at distance 2.
        assert_eq!(h.nearest_code("I25.11", &set(&["I25.2", "I25.1"])).unwrap().as_str(), "I25.1");
    }

    #[test]
    fn errors() {
        let h = hierarchy(&["I25", "I251"]);
        assert!(matches!(h.nearest_code("I25.1", &BTreeSet::new()), Err(KbError::NoCandidates)));
        assert!(matches!(h.nearest_code("Z99", &set(&["I25"])), Err(KbError::UnknownCode(_))));
        assert!(matches!(h.nearest_code("I25.1", &set(&["Q00"])), Err(KbError::NoCandidates)));
    }

    #[test]
    fn matches_exhaustive_distance_on_random_subsets() {
        use rand::seq::IndexedRandom;
        use rand::{Rng, SeedableRng};
        let codes = [
            "A00", "A000", "A001", "A009", "A01", "A010", "A0100", "A0101", "A011", "B20", "B201",
            "B2010", "B2011", "B202", "C10", "C101", "C1011", "C10111", "C10112", "C1012", "C102",
        ];
        let h = hierarchy(&codes);
        let all: Vec<String> = h.codes().map(|c| c.to_string()).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let target = all.choose(&mut rng).unwrap().clone();
            let k = rng.random_range(1..6);
            let covered: BTreeSet<Code> = all
                .choose_multiple(&mut rng, k)
                .filter(|c| **c != target)
                .map(|c| Code::parse(c).unwrap())
                .collect();
            if covered.is_empty() {
                continue;
            }
            let got = h.nearest_code(&target, &covered).unwrap();
            assert!(covered.contains(&got));
            let best = covered.iter().map(|c| lca_distance(&h, &target, c.as_str())).min().unwrap();
            assert_eq!(lca_distance(&h, &target, got.as_str()), best);
            let first_at_best = covered
                .iter()
                .find(|c| lca_distance(&h, &target, c.as_str()) == best)
                .unwrap();
            assert_eq!(&got, first_at_best);
        }
    }
}
