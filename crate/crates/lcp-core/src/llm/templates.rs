//! Prompt templates for correlation elicitation. Placeholders use single
//! braces (`{attr1}`) and are substituted byte-exactly; the literal JSON
//! braces in the response-format blocks are left untouched.

use thiserror::Error;

use crate::benchmark::BenchmarkRecord;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("record field {0:?} required by the template is empty or missing")]
    MissingField(&'static str),
}

/// The prompt families the pipeline issues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    /// Point prediction of the coefficient; the decoded span feeds the
    /// smoothed logit prior.
    LcpPredict,
    /// Verbalized mean and standard deviation for the Gaussian baseline.
    GaussianPredict,
    /// Point prediction conditioned on a hypothetical context.
    PredictWithContext,
    /// Column-name quality judgment used during benchmark curation.
    ColumnSemantics,
}

impl TemplateId {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::LcpPredict => "lcp_predict",
            Self::GaussianPredict => "gaussian_predict",
            Self::PredictWithContext => "predict_with_context",
            Self::ColumnSemantics => "column_semantics",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lcp_predict" => Some(Self::LcpPredict),
            "gaussian_predict" => Some(Self::GaussianPredict),
            "predict_with_context" => Some(Self::PredictWithContext),
            "column_semantics" => Some(Self::ColumnSemantics),
            _ => None,
        }
    }

    pub fn all() -> [TemplateId; 4] {
        [
            Self::LcpPredict,
            Self::GaussianPredict,
            Self::PredictWithContext,
            Self::ColumnSemantics,
        ]
    }

    pub fn body(&self) -> &'static str {
        match self {
            Self::LcpPredict => LCP_PREDICT_TEMPLATE,
            Self::GaussianPredict => GAUSSIAN_PREDICT_TEMPLATE,
            Self::PredictWithContext => PREDICT_WITH_CONTEXT_TEMPLATE,
            Self::ColumnSemantics => COLUMN_SEMANTICS_TEMPLATE,
        }
    }
}

impl std::fmt::Display for TemplateId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const LCP_PREDICT_TEMPLATE: &str = "\
Task: You are given two attributes from a tabular dataset. Your task is to predict the Pearson's correlation coefficient between the two attributes.

Now, begin to solve the following problem:

Attributes:
- {attr1}
- {attr2}

Source Table: {table}

Descriptions:
- Dataset Description: {tbl_desc}
- Attribute Descriptions:
  - {attr1}: {var1_desc}
  - {attr2}: {var2_desc}

Respond with your predictions in the following format:

{
  \"coefficient\": \"<predicted correlation coefficient>\",
}
";

pub const GAUSSIAN_PREDICT_TEMPLATE: &str = "\
Task: You are given two attributes from a tabular dataset. Your task is to predict the Pearson's correlation coefficient between the two attributes and estimate your confidence in the predicted correlation by providing the standard deviation as a measure of uncertainty. Note that the standard deviation cannot be zero.

Now, begin to solve the following problem:

Attributes:
- {attr1}
- {attr2}

Source Table: {table}

Descriptions:
- Dataset Description: {tbl_desc}
- Attribute Descriptions:
  - {attr1}: {var1_desc}
  - {attr2}: {var2_desc}

Respond with your predictions in the following format:

{
  \"coefficient\": \"<predicted correlation coefficient>\",
  \"standard deviation\": \"<predicted uncertainty>\",
}
";

pub const PREDICT_WITH_CONTEXT_TEMPLATE: &str = "\
Task: Given two attributes from a tabular dataset and a hypothetical context (which may differ from Earth), predict the Pearson correlation coefficient between them.

Guidelines:
- Use the scenario described under Context to inform your reasoning.
- Return a single floating-point value in the range [-1, 1].

Now, solve the following:

Context:
{context}

Attributes:
- {attr1}
- {attr2}

Source Table: {table}

Descriptions:
- Dataset Description: {tbl_desc}
- Attribute Descriptions:
  - {attr1}: {var1_desc}
  - {attr2}: {var2_desc}

Format your answer as:

{
  \"coefficient\": \"<predicted correlation coefficient>\",
  \"explanation\": \"<explanation of the prediction>\"
}
";

pub const COLUMN_SEMANTICS_TEMPLATE: &str = "\
You are given a column name and the context in which it appears. Your task is to judge whether the column name clearly and accurately conveys its meaning.

Column Name: {attr1}
Dataset Name: {table}
Dataset Description: {tbl_desc}

Please respond in JSON using exactly this format:
{
  \"valid\": \"<yes or no>\"
}
";

/// Substitutes record fields into the template body. Substitution is a plain
/// byte-exact replacement with no other mutation of the template text.
///
/// `predict_with_context` requires `context_override`; `column_semantics`
/// judges the record's first variable name.
pub fn render_prompt(
    template_id: TemplateId,
    record: &BenchmarkRecord,
) -> Result<String, TemplateError> {
    let require = |value: &str, name: &'static str| -> Result<(), TemplateError> {
        if value.is_empty() {
            Err(TemplateError::MissingField(name))
        } else {
            Ok(())
        }
    };
    require(&record.var1_name, "var1_name")?;
    require(&record.table_name, "table_name")?;
    if template_id != TemplateId::ColumnSemantics {
        require(&record.var2_name, "var2_name")?;
    }
    let mut text = template_id.body().to_string();
    if template_id == TemplateId::PredictWithContext {
        let context = record
            .context_override
            .as_deref()
            .filter(|c| !c.is_empty())
            .ok_or(TemplateError::MissingField("context_override"))?;
        text = text.replace("{context}", context);
    }
    text = text
        .replace("{attr1}", &record.var1_name)
        .replace("{attr2}", &record.var2_name)
        .replace("{table}", &record.table_name)
        .replace("{tbl_desc}", &record.dataset_desc)
        .replace("{var1_desc}", &record.var1_desc)
        .replace("{var2_desc}", &record.var2_desc);
    Ok(text)
}

/// Column-name judgment prompt for an arbitrary column outside a record.
pub fn render_column_semantics(col_name: &str, dataset_name: &str, dataset_desc: &str) -> String {
    COLUMN_SEMANTICS_TEMPLATE
        .replace("{attr1}", col_name)
        .replace("{table}", dataset_name)
        .replace("{tbl_desc}", dataset_desc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_record() -> BenchmarkRecord {
        BenchmarkRecord {
            pair_id: "p1".to_string(),
            var1_name: "daily_temp".to_string(),
            var2_name: "ice_cream_sales".to_string(),
            var1_desc: "mean daily temperature".to_string(),
            var2_desc: "units sold per day".to_string(),
            table_name: "city_sales".to_string(),
            dataset_desc: "retail sales with weather".to_string(),
            context_override: None,
            r_obs: 0.8,
            p_value: 0.001,
            n: 365,
            expert_flag: None,
            provenance: None,
        }
    }

    #[test]
    fn lcp_prompt_contains_names_and_descriptions() {
        let prompt = render_prompt(TemplateId::LcpPredict, &full_record()).unwrap();
        assert!(prompt.contains("daily_temp"));
        assert!(prompt.contains("ice_cream_sales"));
        assert!(prompt.contains("mean daily temperature"));
        assert!(prompt.contains("units sold per day"));
        assert!(prompt.contains("\"coefficient\""));
        assert!(!prompt.contains('{') || !prompt.contains("{attr1}"));
    }

    #[test]
    fn gaussian_prompt_forbids_zero_deviation() {
        let prompt = render_prompt(TemplateId::GaussianPredict, &full_record()).unwrap();
        assert!(prompt.contains("the standard deviation cannot be zero"));
        assert!(prompt.contains("\"standard deviation\""));
    }

    #[test]
    fn context_template_requires_context() {
        let record = full_record();
        let err = render_prompt(TemplateId::PredictWithContext, &record).unwrap_err();
        assert!(matches!(err, TemplateError::MissingField("context_override")));

        let mut with_ctx = record;
        with_ctx.context_override = Some("a world without refrigeration".to_string());
        let prompt = render_prompt(TemplateId::PredictWithContext, &with_ctx).unwrap();
        assert!(prompt.contains("a world without refrigeration"));
    }

    #[test]
    fn empty_required_field_rejected() {
        let mut record = full_record();
        record.var2_name = String::new();
        assert!(matches!(
            render_prompt(TemplateId::LcpPredict, &record),
            Err(TemplateError::MissingField("var2_name"))
        ));
    }

    #[test]
    fn identical_fields_render_identically() {
        let a = render_prompt(TemplateId::LcpPredict, &full_record()).unwrap();
        let mut other = full_record();
        other.pair_id = "different-id".to_string();
        other.r_obs = -0.3;
        let b = render_prompt(TemplateId::LcpPredict, &other).unwrap();
        assert_eq!(a, b, "prompt depends only on the template fields");
    }

    #[test]
    fn template_id_round_trip() {
        for id in TemplateId::all() {
            assert_eq!(TemplateId::parse(id.as_str()), Some(id));
        }
        assert_eq!(TemplateId::parse("nope"), None);
    }
}
