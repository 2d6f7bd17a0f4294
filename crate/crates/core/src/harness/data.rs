use super::config::DataSection;
use super::Result;
use crate::stormdata::{
    self, content_hash, generate, window_subset, FrameSequence, Manifest, NowcastSample, Split,
};

/// Events, their event-level split and the windows cut from each part.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub events: Vec<FrameSequence>,
    pub split: Split,
    pub train: Vec<NowcastSample>,
    pub val: Vec<NowcastSample>,
    pub test: Vec<NowcastSample>,
    pub manifest: Manifest,
}

impl Dataset {
    /// Hash identifying the test split's content.
    pub fn test_hash(&self) -> &str {
        self.manifest.get("test_hash").unwrap_or("")
    }
}

pub fn load_events(data: &DataSection) -> Result<Vec<FrameSequence>> {
    Ok(match &data.ingest {
        Some(ing) => stormdata::ingest(&ing.path, ing.step_minutes)?.1,
        None => generate(&data.synthetic)?,
    })
}

pub fn build_dataset(data: &DataSection) -> Result<Dataset> {
    let events = load_events(data)?;
    from_events(events, data)
}

pub fn from_events(events: Vec<FrameSequence>, data: &DataSection) -> Result<Dataset> {
    let split = stormdata::split_events(events.len(), data.split_seed);
    let (train, s1) = window_subset(&events, &split.train, &data.window)?;
    let (val, s2) = window_subset(&events, &split.val, &data.window)?;
    let (test, s3) = window_subset(&events, &split.test, &data.window)?;
    let mut m = Manifest::new();
    match &data.ingest {
        Some(ing) => m.set("source", ing.path.display()),
        None => m.set("source", "synthetic").set("synthetic_seed", data.synthetic.seed),
    };
    let shape = events.first().map(|e| e.frames.shape().to_vec()).unwrap_or_default();
    m.set("n_events", events.len())
        .set("event_shape", format!("{shape:?}"))
        .set("split_seed", data.split_seed)
        .set(
            "window",
            format!("{}+{}/{}", data.window.history, data.window.target, data.window.stride),
        )
        .set("train_events", split.train.len())
        .set("val_events", split.val.len())
        .set("test_events", split.test.len())
        .set("train_samples", train.len())
        .set("val_samples", val.len())
        .set("test_samples", test.len())
        .set("skipped_short_events", s1 + s2 + s3)
        .set("data_hash", content_hash(&events))
        .set("test_hash", content_hash(split.test.iter().map(|&i| &events[i])));
    Ok(Dataset {
        events,
        split,
        train,
        val,
        test,
        manifest: m,
    })
}
