//! Prompt construction, model-output parsing, target formatting and batch
//! execution against an inference endpoint.

mod batch;
mod parse;
mod prompt;

pub use batch::{
    read_results, replay_batch, run_batch, write_results, BatchItem, BatchOptions, BatchRecord,
    ResultRecord,
};
pub use parse::{parse_model_output, ModelOutput, OutputKind, PromptMode};
pub use prompt::{
    build_multi_prompt, build_single_prompt, format_bbox, format_target, format_target_with,
    ChatRequest, CoordMode, DecodingParams, ImageRef, PromptError, Segment, MULTI_SYSTEM_PROMPT,
    NO_ANSWER, SINGLE_SYSTEM_PROMPT,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AttributionExample, Category, Dataset, DocumentImage, Split};
    use crate::endpoint::{FnClient, RetryPolicy, ScriptedClient};
    use crate::geom::{BBox, ImageDims};
    use crate::retrieval::CandidateSet;
    use crate::textmatch::AnswerSet;
    use proptest::prelude::*;
    use std::path::PathBuf;

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn image(id: &str, w: u32, h: u32) -> ImageRef {
        ImageRef { doc_id: id.into(), path: PathBuf::from(format!("{id}.png")), width: w, height: h }
    }

    fn example(answer: &str, b: BBox) -> AttributionExample {
        AttributionExample {
            example_id: "e1".into(),
            query: "Where?".into(),
            answers: AnswerSet::single(answer).unwrap(),
            gold_doc_id: "d2".into(),
            gold_bbox: b,
            category: Category::NonPassage,
            split: Split::Test,
        }
    }

    fn corpus() -> Dataset {
        let mut ds = Dataset::default();
        for (id, h) in [("d1", 1000), ("d2", 2000), ("d3", 3000)] {
            ds.documents.insert(
                id.into(),
                DocumentImage {
                    doc_id: id.into(),
                    width: 980,
                    height: h,
                    page_height: 980,
                    image_path: format!("{id}.png").into(),
                    source_url: None,
                },
            );
        }
        ds
    }

    fn cands(docs: &[&str], slot: Option<usize>) -> CandidateSet {
        CandidateSet {
            example_id: "e1".into(),
            docs: docs.iter().map(|s| s.to_string()).collect(),
            gold_slot: slot,
            has_gold: slot.is_some(),
        }
    }

    #[test]
    fn single_prompt_layout() {
        let r = build_single_prompt("e1", "Who wrote it?", image("d", 980, 2000));
        assert_eq!(
            r.system,
            "Given a document image, your task is to answer the question and locate the source of the answer via a bounding box."
        );
        assert_eq!(r.images().count(), 1);
        assert_eq!(
            r.transcript(),
            "System:\nGiven a document image, your task is to answer the question and locate the source of the answer via a bounding box.\n\nUser:\n<image:d> Image Size: (980, 2000)\nQuestion: Who wrote it?"
        );
        assert_eq!(r, build_single_prompt("e1", "Who wrote it?", image("d", 980, 2000)));
    }

    #[test]
    fn multi_prompt_follows_candidate_order() {
        let ds = corpus();
        let r = build_multi_prompt("q", &cands(&["d3", "d1", "d2"], Some(3)), &ds).unwrap();
        assert!(r.system.starts_with("Given document images, your task"));
        let ids: Vec<_> = r.images().map(|i| i.doc_id.as_str()).collect();
        assert_eq!(ids, ["d3", "d1", "d2"]);
        let r2 = build_multi_prompt("q", &cands(&["d2", "d3", "d1"], Some(1)), &ds).unwrap();
        let ids: Vec<_> = r2.images().map(|i| i.doc_id.as_str()).collect();
        assert_eq!(ids, ["d2", "d3", "d1"]);
        assert!(r.transcript().ends_with(
            "<image:d3> Image Size: (980, 3000)\n<image:d1> Image Size: (980, 1000)\n<image:d2> Image Size: (980, 2000)\nQuestion: q"
        ));
        assert_eq!(
            build_multi_prompt("q", &cands(&["d1", "zz", "d2"], Some(1)), &ds),
            Err(PromptError::MissingDoc("zz".into()))
        );
    }

    #[test]
    fn targets() {
        let ex = example("Paris", bb(10.0, 20.0, 110.0, 220.0));
        assert_eq!(format_target(&ex, None), "Answer: Paris\nBounding Box: [(10, 20), (110, 220)]");
        let multi = format_target(&ex, Some(&cands(&["d1", "d3", "d2"], Some(3))));
        assert_eq!(multi, "Answer: Paris\nEvidence Document: 3\nBounding Box: [(10, 20), (110, 220)]");
        assert_eq!(format_target(&ex, Some(&cands(&["d1", "d3", "d4"], None))), "No answer.");
    }

    #[test]
    fn normalized_target() {
        let ex = example("Paris", bb(0.0, 0.0, 490.0, 980.0));
        let dims = ImageDims::new(980, 3920);
        let t = format_target_with(&ex, None, CoordMode::Normalized, Some(&dims));
        assert_eq!(t, "Answer: Paris\nBounding Box: [(0, 0), (0.5, 0.25)]");
        let out = parse_model_output(&t, PromptMode::Single, &[dims], CoordMode::Normalized);
        assert_eq!(out.bbox, Some(ex.gold_bbox));
    }

    #[test]
    fn parse_single() {
        let d = [ImageDims::new(980, 2000)];
        let out = parse_model_output(
            "Answer: Paris\nBounding Box: [(10, 20), (110, 220)]",
            PromptMode::Single,
            &d,
            CoordMode::Absolute,
        );
        assert_eq!(out.kind, OutputKind::Answered);
        assert_eq!(out.answer.as_deref(), Some("Paris"));
        assert_eq!(out.bbox, Some(bb(10.0, 20.0, 110.0, 220.0)));
    }

    #[test]
    fn parse_bracket_variants_and_clipping() {
        let d = [ImageDims::new(100, 100)];
        for text in [
            "Answer: x\nBounding Box: [[10,20],[50,60]]",
            "Answer: x\nBounding Box: (10,20),(50,60)",
            "Answer: x\nBounding Box: [10, 20, 50, 60]",
            "  Answer: x  \n\n  Bounding Box:   [( 10 ,20 ),( 50, 60)]  ",
        ] {
            let out = parse_model_output(text, PromptMode::Single, &d, CoordMode::Absolute);
            assert_eq!(out.bbox, Some(bb(10.0, 20.0, 50.0, 60.0)), "{text}");
        }
        let out = parse_model_output(
            "Answer: x\nBounding Box: [(-5, 90), (120, 130)]",
            PromptMode::Single,
            &d,
            CoordMode::Absolute,
        );
        assert_eq!(out.bbox, Some(bb(0.0, 90.0, 100.0, 100.0)));
    }

    #[test]
    fn parse_no_answer_variants() {
        let d = [ImageDims::new(10, 10)];
        for text in ["No answer.", "no answer", "  NO ANSWER  ", "No Answer.\n", "Answer: No answer."] {
            let out = parse_model_output(text, PromptMode::Multi, &d, CoordMode::Absolute);
            assert_eq!(out.kind, OutputKind::NoAnswer, "{text:?}");
        }
    }

    #[test]
    fn parse_multi_evidence() {
        let d = [ImageDims::new(10, 10); 3];
        let out = parse_model_output(
            "Answer: X\nEvidence Document: 2\nBounding Box: [(0,0),(5,5)]",
            PromptMode::Multi,
            &d,
            CoordMode::Absolute,
        );
        assert_eq!(out.kind, OutputKind::Answered);
        assert_eq!(out.evidence_index, Some(2));
        for bad in [
            "Answer: X\nEvidence Document: 4\nBounding Box: [(0,0),(5,5)]",
            "Answer: X\nEvidence Document: 0\nBounding Box: [(0,0),(5,5)]",
            "Answer: X\nEvidence Document: two\nBounding Box: [(0,0),(5,5)]",
            "Answer: X\nBounding Box: [(0,0),(5,5)]",
        ] {
            let out = parse_model_output(bad, PromptMode::Multi, &d, CoordMode::Absolute);
            assert_eq!(out.kind, OutputKind::Unparseable, "{bad}");
            assert!(out.note.is_some());
        }
    }

    #[test]
    fn parse_rejects_garbage() {
        let d = [ImageDims::new(100, 100)];
        for bad in [
            "I cannot help",
            "",
            "Answer: \nBounding Box: [(0,0),(5,5)]",
            "Answer: x",
            "answer: x\nbounding box: [(0,0),(5,5)]",
            "Answer: x\nBounding Box: [(0,0),(5,5),(7,7)]",
            "Answer: x\nBounding Box: top left corner",
            "Answer: x\nBounding Box: [(10,10),(5,5)]",
            "Answer: x\nBounding Box: [(200,200),(300,300)]",
            "Answer: x\nBounding Box: [(10,10),(10,50)]",
        ] {
            let out = parse_model_output(bad, PromptMode::Single, &d, CoordMode::Absolute);
            assert_eq!(out.kind, OutputKind::Unparseable, "{bad:?}");
        }
    }

    #[test]
    fn batch_is_sorted_and_resilient() {
        let items: Vec<BatchItem> = ["c", "a", "b"]
            .iter()
            .map(|id| BatchItem {
                example_id: id.to_string(),
                request: build_single_prompt(id, "q", image("d", 100, 100)),
                mode: PromptMode::Single,
                dims: vec![ImageDims::new(100, 100)],
                coord: CoordMode::Absolute,
            })
            .collect();
        let client = ScriptedClient::new()
            .respond("a", "Answer: A\nBounding Box: [(1,1),(2,2)]")
            .respond("b", "garbage")
            .fail("c", "down")
            .fail("c", "down");
        let opts = BatchOptions { max_in_flight: 2, retry: RetryPolicy { max_retries: 1, backoff_ms: 0 } };
        let out = run_batch(&items, &client, &opts);
        let ids: Vec<_> = out.iter().map(|r| r.example_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(out[0].output.kind, OutputKind::Answered);
        assert_eq!(out[1].output.kind, OutputKind::Unparseable);
        assert_eq!(out[2].output.kind, OutputKind::Unparseable);
        assert!(out[2].error.is_some());
        assert_eq!(out[2].attempts, 2);

        let stored: Vec<ResultRecord> = out.iter().map(ResultRecord::from).collect();
        let replayed = replay_batch(&items, &stored);
        for (a, b) in out.iter().zip(&replayed) {
            assert_eq!(a.output, b.output);
        }

        let calls = std::sync::atomic::AtomicUsize::new(0);
        let counting = FnClient(|_: &ChatRequest| {
            calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            Ok("Answer: A\nBounding Box: [(1,1),(2,2)]".to_string())
        });
        run_batch(&items, &counting, &opts);
        assert_eq!(calls.load(std::sync::atomic::Ordering::SeqCst), 3);
    }

    fn arb_example() -> impl Strategy<Value = (AttributionExample, u32, u32)> {
        (
            "[A-Za-z0-9][A-Za-z0-9 ,'-]{0,30}[A-Za-z0-9]",
            0u32..900,
            0u32..1900,
            1u32..80,
            1u32..100,
        )
            .prop_map(|(ans, x, y, w, h)| {
                let ex = example(&ans, bb(x as f64, y as f64, (x + w) as f64, (y + h) as f64));
                (ex, 980, 2000)
            })
    }

    proptest! {
        #[test]
        fn single_round_trip((ex, w, h) in arb_example()) {
            let dims = [ImageDims::new(w, h)];
            let out = parse_model_output(&format_target(&ex, None), PromptMode::Single, &dims, CoordMode::Absolute);
            prop_assert_eq!(out.kind, OutputKind::Answered);
            prop_assert_eq!(out.answer.as_deref(), Some(ex.answers.primary()));
            prop_assert_eq!(out.bbox, Some(ex.gold_bbox));
        }

        #[test]
        fn multi_round_trip((ex, w, h) in arb_example(), slot in 1usize..=3) {
            let dims = [ImageDims::new(w, h); 3];
            let c = cands(&["a", "b", "c"], Some(slot));
            let out = parse_model_output(&format_target(&ex, Some(&c)), PromptMode::Multi, &dims, CoordMode::Absolute);
            prop_assert_eq!(out.evidence_index, Some(slot));
            prop_assert_eq!(out.bbox, Some(ex.gold_bbox));
            prop_assert_eq!(out.answer.as_deref(), Some(ex.answers.primary()));
        }

        #[test]
        fn parsed_boxes_are_valid(text in "Answer: x\nBounding Box: \\[\\(-?[0-9]{1,4}, -?[0-9]{1,4}\\), \\(-?[0-9]{1,4}, -?[0-9]{1,4}\\)\\]") {
            let d = ImageDims::new(500, 700);
            let out = parse_model_output(&text, PromptMode::Single, &[d], CoordMode::Absolute);
            match out.kind {
                OutputKind::Answered => {
                    let b = out.bbox.unwrap();
                    prop_assert!(b.width() > 0.0 && b.height() > 0.0 && b.within(&d));
                }
                OutputKind::Unparseable => {}
                OutputKind::NoAnswer => prop_assert!(false),
            }
        }
    }
}
