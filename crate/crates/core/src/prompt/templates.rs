//! Frozen prompt templates.
//!
//! These strings are a byte-level contract: the builders substitute the
//! `{LAGS}` / `{MONTHS}` markers and nothing else, and the results are pinned
//! by golden files under `tests/golden/`. Do not reflow, rewrap, or "fix"
//! wording here without regenerating the goldens on purpose.

/// Ranking prompt over a CSV grid of weekly returns.
pub const RANK_TEMPLATE: &str = "The following is the return data for ten stocks from week t-{LAGS} to week t-1:\n\
Based on the information, please rank the return of these ten stocks in week t. How confident are you about the ranking?\n\
Your output will be in JSON format with the following format:\n\
'{\"rank\":{\"1\":\"stock id\",\"2\":\"stock id\",..., \"10\":\"stock id\"}, \"confidence\": }'. 1 stands for the highest return and 10 for the lowest returns. Confidence represents a probability that ranges from 0 to 1.\n";

/// Market-direction prompt over twelve monthly index returns.
pub const SENTIMENT_TEMPLATE: &str = "The csv data contain the monthly stock returns in months t-12 to t-1.\n\
Please answer the following questions:\n\
Do you feel the direction of the stock market over the next six months will be up (bullish), no change (neutral) or down (bearish)?\n\
How confident are you about this prediction?\n\
Your output will be in json format with the following format:\n\
'{\"prediction\":,\"confidence\":}'. 1 stands for bullish, 0 for neutral and -1 for bearish.\n\
Confidence represents a probability that ranges from 0 to 1.\n";

/// Next-month return-distribution prompt over a monthly return window.
pub const DISTRIBUTION_TEMPLATE: &str =
    "Below are the monthly returns for a financial asset over the past {MONTHS} months.\n\
Please answer the following questions on next month's return\n\
There is a 1-in-10 chance the actual return will be less than a%.\n\
I expect the next month's return to be: b%.\n\
There is a 1-in-10 chance the actual return will be greater than c%.\n\
Please return a JSON object in the following format:\n\
'{\"low\": a%,\"expected\": b%,\"high\": c%}'.\n";

/// Ranking prompt over candlestick chart images instead of a return grid.
pub const CHART_TEMPLATE: &str = "The charts contain daily stock price data for ten stocks from the past {LAGS} weeks.\n\
The file names of the images contain the stock id.\n\
Based on the information, please rank the returns of these ten stocks in the following week.\n\
Your output will be in json format with the following format:\n\
'{\"1\": \"stock id\", \"2\": \"stock id\", ..., \"10\": \"stock id\"}'. 1 stands for the highest return and 10 for the lowest return.\n";
