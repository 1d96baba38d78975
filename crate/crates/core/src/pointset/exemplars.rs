use crate::error::{Error, Result};

/// Stored representatives per learned class, `capacity` ids each.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExemplarStore {
    capacity: usize,
    classes: Vec<(String, Vec<String>)>,
}

impl ExemplarStore {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, classes: Vec::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn insert(&mut self, class: impl Into<String>, ids: Vec<String>) -> Result<()> {
        let class = class.into();
        if ids.len() != self.capacity {
            return Err(Error::invalid(format!(
                "class '{class}' needs exactly {} exemplars, got {}",
                self.capacity,
                ids.len()
            )));
        }
        if self.get(&class).is_some() {
            return Err(Error::invalid(format!("exemplars for '{class}' already stored")));
        }
        self.classes.push((class, ids));
        Ok(())
    }

    pub fn get(&self, class: &str) -> Option<&[String]> {
        self.classes.iter().find(|(c, _)| c == class).map(|(_, ids)| ids.as_slice())
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|(c, _)| c.as_str())
    }

    /// Every `(class, id)` pair in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.classes
            .iter()
            .flat_map(|(c, ids)| ids.iter().map(move |id| (c.as_str(), id.as_str())))
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}
