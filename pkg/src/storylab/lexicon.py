"""Bundled word lists for delexicalization.

A small gendered first-name lexicon plus a stoplist of common capitalized
sentence starters. Both are deliberately tiny; real corpora can pass their
own lists.
"""

MALE_NAMES = {
    "adam", "alex", "ben", "bob", "carl", "dan", "david", "eric", "frank",
    "george", "henry", "jack", "james", "jim", "joe", "john", "ken", "kent",
    "kevin", "leo", "liam", "luke", "mark", "matt", "max", "mike", "nick",
    "omar", "paul", "pete", "peter", "raj", "sam", "sean", "steve", "ted",
    "tim", "tom", "tony", "victor", "will",
}

FEMALE_NAMES = {
    "alice", "amy", "anna", "beth", "carla", "clara", "daisy", "diana",
    "elena", "ella", "emma", "eva", "grace", "iris", "jane", "jill", "julia",
    "kate", "laura", "lena", "lily", "lisa", "lucy", "mary", "maya", "mia",
    "nina", "nora", "olivia", "rosa", "ruth", "sara", "sarah", "sofia",
    "susan", "tina", "wendy", "zoe",
}

# Capitalized forms of these words are ordinary sentence starters, never
# treated as proper names.
COMMON_WORDS = {
    "a", "an", "the", "this", "that", "these", "those", "some", "any", "no",
    "every", "each", "all", "both", "few", "many", "much", "one", "two",
    "three", "i", "you", "he", "she", "it", "we", "they", "me", "him", "her",
    "us", "them", "my", "your", "his", "its", "our", "their", "mine", "hers",
    "who", "whom", "whose", "what", "which", "when", "where", "why", "how",
    "there", "here", "now", "then", "today", "tomorrow", "yesterday", "soon",
    "later", "once", "twice", "again", "always", "never", "often", "sometimes",
    "suddenly", "finally", "eventually", "meanwhile", "afterwards", "instead",
    "luckily", "unfortunately", "sadly", "happily", "everyone", "everybody",
    "someone", "somebody", "nobody", "nothing", "something", "anything",
    "people", "and", "but", "or", "nor", "so", "yet", "for", "if", "unless",
    "because", "since", "while", "although", "though", "after", "before",
    "during", "until", "as", "at", "by", "from", "in", "into", "of", "off",
    "on", "onto", "out", "over", "to", "under", "up", "down", "with",
    "without", "about", "against", "between", "through", "is", "are", "was",
    "were", "be", "been", "being", "am", "do", "does", "did", "have", "has",
    "had", "will", "would", "can", "could", "shall", "should", "may", "might",
    "must", "not", "last", "first", "next", "one", "morning", "evening",
    "night", "day", "week", "month", "year", "mr", "mrs", "ms", "dr",
}
